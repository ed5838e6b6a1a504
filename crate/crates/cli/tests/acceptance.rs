//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 8 needs the HetRec 2011 Delicious dump, which is not shipped.
//! Point `HDMF_DELICIOUS_PATH` at `user_taggedbookmarks-timestamps.dat` (or
//! `user_taggedbookmarks.dat`) to run it. When the file is absent the line
//! reads FAIL with the reason, and that failure alone does not fail the run.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{hdmf, logged_losses, read_report, run, stderr, stdout, write_planted_tsv};
use hdmf_core::autoencoder::{Architecture, ModelParams};
use hdmf_core::checkpoint::{decode_checkpoint, encode_params, load_checkpoint, record_len, save_params, Model};
use hdmf_core::eval::{evaluate, RankedList};
use hdmf_core::folksonomy::{read_cache, RatingMatrix};
use hdmf_core::objective::{hdmf_loss, GradCheckInstance, HyperParams};
use hdmf_core::train::{train_mf, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
    /// Failed only because an external input is missing.
    unavailable: bool,
}

impl Outcome {
    fn check(passed: bool, detail: String) -> Self {
        Outcome {
            passed,
            detail,
            unavailable: false,
        }
    }
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let took = started.elapsed();
    (took <= limit, format!("{:.2}s of {}s", took.as_secs_f64(), limit.as_secs()))
}

// 1. Analytic gradient vs central differences through the CLI.
fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let out = run(hdmf().args([
        "check-gradients",
        "--encoder",
        "8,5,3",
        "--tags",
        "12",
        "--seeds",
        "1,2,3",
        "--tolerance",
        "1e-5",
    ]));
    let (fast, time) = within(Duration::from_secs(10), started);
    let text = stdout(&out);
    let ok_lines = text.lines().filter(|l| l.ends_with(": ok")).count();
    Outcome::check(
        out.status.success() && ok_lines == 3 && fast,
        format!("{ok_lines}/3 seeds within 1e-5 relative, eps 1e-4, floor 1e-8; {time}"),
    )
}

// 2. hdmf_loss vs a straight-line scalar evaluation.
fn scalar_forward(params: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = params.arch().depth();
    let mut h = x.to_vec();
    let mut code = Vec::new();
    for l in 1..=2 * k {
        let b = params.bias(l);
        let mut next = vec![0.0; b.len()];
        for (r, out) in next.iter_mut().enumerate() {
            let mut s = b[r];
            for (c, hv) in h.iter().enumerate() {
                s += if l <= k {
                    params.weight(l).get(r, c) * hv
                } else {
                    params.weight(2 * k + 1 - l).get(c, r) * hv
                };
            }
            *out = s.tanh();
        }
        h = next;
        if l == k {
            code = h.clone();
        }
    }
    (code, h)
}

fn scalar_loss(inst: &GradCheckInstance) -> f64 {
    let (p, hp, batch) = (&inst.params, &inst.hp, &inst.batch);
    let column = |m: &hdmf_core::tensor::DenseMatrix, c: usize| -> Vec<f64> { (0..m.rows()).map(|r| m.get(r, c)).collect() };
    let users: Vec<_> = (0..batch.users().len()).map(|c| column(batch.user_columns(), c)).collect();
    let items: Vec<_> = (0..batch.items().len()).map(|c| column(batch.item_columns(), c)).collect();
    let uf: Vec<_> = users.iter().map(|x| scalar_forward(p, x)).collect();
    let vf: Vec<_> = items.iter().map(|y| scalar_forward(p, y)).collect();
    let mut residual = 0.0;
    for (a, b, r) in batch.local_pairs() {
        let pred: f64 = uf[a].0.iter().zip(&vf[b].0).map(|(x, y)| x * y).sum();
        residual += (r - pred) * (r - pred);
    }
    let mut recon = 0.0;
    for (inputs, fwd) in [(&users, &uf), (&items, &vf)] {
        for (x, (_, xr)) in inputs.iter().zip(fwd.iter()) {
            recon += x.iter().zip(xr).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        }
    }
    let mut reg = 0.0;
    for w in p.weights() {
        reg += w.as_slice().iter().map(|v| v * v).sum::<f64>();
    }
    for b in p.biases() {
        reg += b.iter().map(|v| v * v).sum::<f64>();
    }
    (1.0 - hp.lambda_theta - hp.lambda_e) * residual + hp.lambda_e * recon + hp.lambda_theta * reg
}

fn loss_oracle() -> Outcome {
    let started = Instant::now();
    let archs = [vec![5, 3], vec![4], vec![6, 4, 2]];
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let arch = Architecture::new(7, archs[seed as usize % archs.len()].clone()).unwrap();
        let hp = HyperParams::new(0.01 + 0.01 * (seed % 3) as f64, 0.1 + 0.05 * (seed % 4) as f64).unwrap();
        let inst = GradCheckInstance::random(&arch, 3, 4, 5, seed, hp).unwrap();
        let (got, _) = hdmf_loss(&inst.batch, &inst.params, &inst.hp).unwrap();
        let want = scalar_loss(&inst);
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    let (fast, time) = within(Duration::from_secs(5), started);
    Outcome::check(worst <= 1e-10 && fast, format!("20 instances, max relative error {worst:.2e} (limit 1e-10); {time}"))
}

// 3. Metrics vs a brute-force definitional oracle.
struct OracleMetrics {
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    map: f64,
    mrr: f64,
}

fn metric_oracle(lists: &[RankedList], relevance: &BTreeMap<usize, BTreeSet<usize>>, cutoffs: &[usize]) -> OracleMetrics {
    let n = lists.len() as f64;
    let mut precision = vec![0.0; cutoffs.len()];
    let mut recall = vec![0.0; cutoffs.len()];
    let (mut map, mut mrr) = (0.0, 0.0);
    for list in lists {
        let rel = &relevance[&list.user];
        for (c, &k) in cutoffs.iter().enumerate() {
            let top: BTreeSet<usize> = list.items.iter().take(k).copied().collect();
            let hits = top.intersection(rel).count();
            precision[c] += hits as f64 / k as f64;
            recall[c] += hits as f64 / rel.len() as f64;
        }
        let rank_of = |item: &usize| list.items.iter().position(|i| i == item).map(|p| p + 1);
        let mut ranks: Vec<usize> = rel.iter().filter_map(rank_of).collect();
        ranks.sort_unstable();
        let mut ap = 0.0;
        for &r in &ranks {
            let relevant_so_far = ranks.iter().filter(|&&q| q <= r).count();
            ap += relevant_so_far as f64 / r as f64;
        }
        map += ap / rel.len() as f64;
        mrr += ranks.first().map_or(0.0, |&r| 1.0 / r as f64);
    }
    precision.iter_mut().for_each(|p| *p /= n);
    recall.iter_mut().for_each(|r| *r /= n);
    let f1 = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    OracleMetrics {
        precision,
        recall,
        f1,
        map: map / n,
        mrr: mrr / n,
    }
}

fn metric_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cutoffs = [1, 3, 5, 10, 20];
    let mut mismatches = 0;
    for _ in 0..100 {
        let users = rng.random_range(1..=4);
        let mut lists = Vec::new();
        let mut relevance = BTreeMap::new();
        for user in 0..users {
            let n = rng.random_range(1..=20);
            let mut items: Vec<usize> = (0..n).collect();
            items.shuffle(&mut rng);
            let m = rng.random_range(1..=n.min(5));
            let mut pool: Vec<usize> = (0..n).collect();
            pool.shuffle(&mut rng);
            relevance.insert(user, pool[..m].iter().copied().collect::<BTreeSet<_>>());
            // Some lists are truncated so that relevant items can be missing.
            let keep = if rng.random_bool(0.3) { rng.random_range(0..=n) } else { n };
            items.truncate(keep);
            lists.push(RankedList { user, items });
        }
        let got = evaluate(&lists, &relevance, &cutoffs).unwrap();
        let want = metric_oracle(&lists, &relevance, &cutoffs);
        let same = got.precision == want.precision
            && got.recall == want.recall
            && got.f1 == want.f1
            && got.map == want.map
            && got.mrr == want.mrr;
        mismatches += usize::from(!same);
    }
    let (fast, time) = within(Duration::from_secs(5), started);
    Outcome::check(mismatches == 0 && fast, format!("{mismatches}/100 instances differ (exact comparison); {time}"))
}

// 4 and 5 share the planted-data runs.
const RUN_CONFIG: &str = "\
seed = 1
min_uses = 1
hidden_layers = [300, 128, 300]
batch_pairs = 16
early_stop_patience = 20
mf_k = 128
";

struct PlantedRuns {
    root: PathBuf,
    first: PathBuf,
    second: PathBuf,
    seconds: f64,
}

fn prepare_and_train(root: &Path, name: &str, tsv: &Path, cfg: &Path, model: &str) -> Result<PathBuf, String> {
    let cache = root.join(format!("{name}-cache"));
    let out_dir = root.join(name);
    let out = run(hdmf().arg("--config").arg(cfg).arg("prepare").arg("--input").arg(tsv).arg("--out").arg(&cache));
    if !out.status.success() {
        return Err(format!("prepare failed: {}", stderr(&out)));
    }
    let out = run(hdmf()
        .arg("--config")
        .arg(cfg)
        .args(["train", "--model", model, "--cache"])
        .arg(&cache)
        .arg("--out")
        .arg(&out_dir));
    if !out.status.success() {
        return Err(format!("train failed: {}", stderr(&out)));
    }
    Ok(out_dir)
}

fn planted_runs(root: &Path) -> Result<PlantedRuns, String> {
    let started = Instant::now();
    let tsv = root.join("planted.tsv");
    write_planted_tsv(&tsv, 1);
    let cfg = root.join("run.toml");
    fs::write(&cfg, RUN_CONFIG).unwrap();
    let first = prepare_and_train(root, "hdmf-a", &tsv, &cfg, "hdmf")?;
    let second = prepare_and_train(root, "hdmf-b", &tsv, &cfg, "hdmf")?;
    Ok(PlantedRuns {
        root: root.to_owned(),
        first,
        second,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn determinism(runs: &Result<PlantedRuns, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, e.clone()),
    };
    let a = fs::read(runs.first.join("model.bin")).unwrap();
    let b = fs::read(runs.second.join("model.bin")).unwrap();
    let la = logged_losses(&runs.first.join("train_log.jsonl"));
    let lb = logged_losses(&runs.second.join("train_log.jsonl"));
    let caches_equal = ["train.tsv", "valid.tsv", "test.tsv"].iter().all(|f| {
        fs::read(runs.root.join("hdmf-a-cache").join(f)).unwrap() == fs::read(runs.root.join("hdmf-b-cache").join(f)).unwrap()
    });
    Outcome::check(
        a == b && la == lb && caches_equal,
        format!(
            "checkpoints {} ({} bytes), {} logged losses {}, caches {}",
            if a == b { "identical" } else { "differ" },
            a.len(),
            la.len(),
            if la == lb { "identical" } else { "differ" },
            if caches_equal { "identical" } else { "differ" }
        ),
    )
}

fn evaluate_mrr(cache: &Path, out_dir: &Path) -> Result<f64, String> {
    let out = run(hdmf().args(["evaluate", "--cache"]).arg(cache).arg("--out").arg(out_dir));
    if !out.status.success() {
        return Err(format!("evaluate failed: {}", stderr(&out)));
    }
    Ok(read_report(&out_dir.join("report.txt"))["MRR"])
}

/// Expected MRR of uniformly random rankings over each user's candidates.
fn random_ranker_mrr(cache: &Path, trials: usize) -> f64 {
    let split = read_cache(cache).unwrap();
    let mut train_items: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for t in &split.train {
        train_items.entry(t.user).or_default().insert(t.item);
    }
    let mut relevance: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for t in &split.test {
        if !train_items.get(&t.user).is_some_and(|s| s.contains(&t.item)) {
            relevance.entry(t.user).or_default().insert(t.item);
        }
    }
    let items = split.vocab.items.len();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut total = 0.0;
    for _ in 0..trials {
        let mut sum = 0.0;
        for (u, rel) in &relevance {
            let empty = BTreeSet::new();
            let seen = train_items.get(u).unwrap_or(&empty);
            let mut candidates: Vec<usize> = (0..items).filter(|i| !seen.contains(i)).collect();
            candidates.shuffle(&mut rng);
            let first = candidates.iter().position(|i| rel.contains(i)).unwrap();
            sum += 1.0 / (first + 1) as f64;
        }
        total += sum / relevance.len() as f64;
    }
    total / trials as f64
}

fn synthetic_superiority(runs: &Result<PlantedRuns, String>) -> Outcome {
    let started = Instant::now();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, e.clone()),
    };
    let cache = runs.root.join("hdmf-a-cache");
    let result = (|| {
        let hdmf_mrr = evaluate_mrr(&cache, &runs.first)?;
        let cfg = runs.root.join("run.toml");
        let tsv = runs.root.join("planted.tsv");
        let mf_dir = prepare_and_train(&runs.root, "mf", &tsv, &cfg, "mf")?;
        let mf_mrr = evaluate_mrr(&runs.root.join("mf-cache"), &mf_dir)?;
        Ok::<_, String>((hdmf_mrr, mf_mrr))
    })();
    let (hdmf_mrr, mf_mrr) = match result {
        Ok(v) => v,
        Err(e) => return Outcome::check(false, e),
    };
    let random = random_ranker_mrr(&cache, 10_000);
    // Includes the HDMF training time from the shared runs (two of them).
    let seconds = started.elapsed().as_secs_f64() + runs.seconds / 2.0;
    let passed = hdmf_mrr >= 3.0 * random && hdmf_mrr >= mf_mrr && seconds <= 300.0;
    Outcome::check(
        passed,
        format!("HDMF MRR {hdmf_mrr:.4}, MF MRR {mf_mrr:.4}, random {random:.4} (x3 = {:.4}); {seconds:.1}s of 300s", 3.0 * random),
    )
}

// 6. Rank-1 recovery by the MF baseline.
/// Leading singular triple of a dense matrix by power iteration.
fn power_iteration(m: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<f64>) {
    let cols = m[0].len();
    let mut v = vec![1.0; cols];
    let mut u = vec![0.0; m.len()];
    let mut sigma = 0.0;
    for _ in 0..200 {
        for (ui, row) in u.iter_mut().zip(m) {
            *ui = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= nu);
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = m.iter().zip(&u).map(|(row, ui)| row[j] * ui).sum();
        }
        sigma = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= sigma);
    }
    (sigma, u, v)
}

fn rank_one_recovery() -> Outcome {
    let a = [1u32, 2, 1, 3, 2, 1, 2];
    let b = [2u32, 1, 1, 2, 3, 1];
    let dense: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x * y) as f64).collect()).collect();
    let (sigma, u, v) = power_iteration(&dense);
    let mut oracle_sse = 0.0;
    for (i, row) in dense.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            oracle_sse += (r - sigma * u[i] * v[j]).powi(2);
        }
    }
    let oracle_rmse = (oracle_sse / (a.len() * b.len()) as f64).sqrt();

    let cells = a.iter().enumerate().flat_map(|(i, x)| b.iter().enumerate().map(move |(j, y)| ((i, j), x * y)));
    let ratings = RatingMatrix::from_entries(a.len(), b.len(), cells).unwrap();
    let mut cfg = TrainConfig::new(Architecture::new(1, vec![1]).unwrap());
    cfg.mf_lambda = 0.0;
    cfg.batch_pairs = 1;
    cfg.max_epochs = 2000;
    cfg.seed = 3;
    let rmse = match train_mf(&ratings, 1, &cfg, None) {
        Ok((mf, _)) => mf.rmse(&ratings),
        Err(e) => return Outcome::check(false, e.to_string()),
    };
    Outcome::check(
        rmse < 0.05 && oracle_rmse < 1e-9,
        format!("k=1, lambda 0: RMSE {rmse:.2e} (limit 0.05); exact rank-1 oracle residual {oracle_rmse:.1e}"),
    )
}

// 7. Checkpoint round trip and CRC.
fn checkpoint_round_trip() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let arch = Architecture::new(12, vec![8, 5, 3]).unwrap();
    let params = ModelParams::init(&arch, 17, 0.3).unwrap();
    save_params(&params, &path).unwrap();
    let bits = |p: &ModelParams| -> Vec<u64> { p.slices().iter().flat_map(|s| s.iter().map(|v| v.to_bits())).collect() };
    let identical = match load_checkpoint(&path) {
        Ok(Model::Hdmf(t)) => t.is_shared() && bits(t.users()) == bits(&params) && t.arch() == &arch,
        _ => false,
    };
    let bytes = encode_params(&params);
    let header = 16 + 4 * arch.depth();
    let mut detected = 0;
    let payload = header..bytes.len() - 4;
    for i in payload.clone() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x01;
        if decode_checkpoint(&bad).is_err_and(|e| e.to_string().contains("CRC")) {
            detected += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(1), started);
    Outcome::check(
        identical && detected == payload.len() && bytes.len() == record_len(&arch) && fast,
        format!(
            "bitwise round trip {}; {detected}/{} single-byte payload flips caught by CRC; {time}",
            if identical { "ok" } else { "broken" },
            payload.len()
        ),
    )
}

// 8. Published dataset statistics for the filtered Delicious dump.
fn delicious_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("HDMF_DELICIOUS_PATH") {
        return Some(PathBuf::from(p));
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    ["user_taggedbookmarks-timestamps.dat", "user_taggedbookmarks.dat"]
        .iter()
        .map(|f| root.join(f))
        .find(|p| p.exists())
}

fn dataset_reproduction() -> Outcome {
    let Some(path) = delicious_path().filter(|p| p.exists()) else {
        return Outcome {
            passed: false,
            unavailable: true,
            detail: "HetRec 2011 Delicious dump not found (set HDMF_DELICIOUS_PATH)".into(),
        };
    };
    let dir = tempfile::tempdir().unwrap();
    let out = run(hdmf()
        .args(["prepare", "--columns", "0,2,1", "--min-uses", "15", "--input"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path()));
    let text = stdout(&out);
    let counts = text.lines().nth(1).unwrap_or_default().to_owned();
    Outcome::check(
        out.status.success() && counts == "1843\t3508\t65877\t339744",
        format!("users/tags/items/assignments = {} (expected 1843/3508/65877/339744)", counts.replace('\t', "/")),
    )
}

fn main() -> ExitCode {
    // The libtest flags cargo passes (e.g. --nocapture) are irrelevant here.
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "loss oracle equivalence", loss_oracle()),
        (3, "metric oracle equivalence", metric_equivalence()),
    ];
    let runs = planted_runs(tmp.path());
    results.push((4, "determinism", determinism(&runs)));
    results.push((5, "synthetic end-to-end superiority", synthetic_superiority(&runs)));
    results.push((6, "MF baseline rank-1 recovery", rank_one_recovery()));
    results.push((7, "checkpoint round trip", checkpoint_round_trip()));
    results.push((8, "Delicious dataset statistics", dataset_reproduction()));

    let mut failed = false;
    for (n, name, o) in &results {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {n} [{status}] {name}: {}", o.detail);
        failed |= !o.passed && !o.unavailable;
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
