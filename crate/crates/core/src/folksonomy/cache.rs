//! Prepared-dataset directory: the filtered vocabularies, one token per
//! line, and the three split assignment files as `user\ttag\titem` TSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{SplitFolksonomy, Triple, Vocabularies, Vocabulary};
use crate::error::{Error, Result};

pub const CACHE_FILES: [&str; 6] = [
    "users.txt",
    "tags.txt",
    "items.txt",
    "train.tsv",
    "valid.tsv",
    "test.tsv",
];

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

fn vocab_text(v: &Vocabulary) -> String {
    v.tokens().iter().map(|t| format!("{t}\n")).collect()
}

fn triples_text(vocab: &Vocabularies, triples: &[Triple]) -> String {
    let mut s = String::new();
    for t in triples {
        s.push_str(vocab.users.token(t.user));
        s.push('\t');
        s.push_str(vocab.tags.token(t.tag));
        s.push('\t');
        s.push_str(vocab.items.token(t.item));
        s.push('\n');
    }
    s
}

pub fn write_cache(dir: &Path, split: &SplitFolksonomy) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let v = &split.vocab;
    let bodies = [
        vocab_text(&v.users),
        vocab_text(&v.tags),
        vocab_text(&v.items),
        triples_text(v, &split.train),
        triples_text(v, &split.valid),
        triples_text(v, &split.test),
    ];
    for (name, body) in CACHE_FILES.iter().zip(bodies) {
        write_file(&dir.join(name), &body)?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let tokens = read_text(path)?.lines().map(str::to_owned).collect();
    Vocabulary::from_tokens(tokens).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn read_triples(path: &Path, vocab: &Vocabularies) -> Result<Vec<Triple>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let bad = |why: &str| Error::Data(format!("{}:{}: {why}", path.display(), n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 tab-separated fields"));
        }
        let lookup = |v: &Vocabulary, tok: &str| v.get(tok).ok_or_else(|| bad(&format!("unknown token {tok:?}")));
        out.push(Triple {
            user: lookup(&vocab.users, fields[0])?,
            tag: lookup(&vocab.tags, fields[1])?,
            item: lookup(&vocab.items, fields[2])?,
        });
    }
    Ok(out)
}

pub fn read_cache(dir: &Path) -> Result<SplitFolksonomy> {
    let vocab = Vocabularies {
        users: read_vocab(&dir.join(CACHE_FILES[0]))?,
        tags: read_vocab(&dir.join(CACHE_FILES[1]))?,
        items: read_vocab(&dir.join(CACHE_FILES[2]))?,
    };
    let train = read_triples(&dir.join(CACHE_FILES[3]), &vocab)?;
    let valid = read_triples(&dir.join(CACHE_FILES[4]), &vocab)?;
    let test = read_triples(&dir.join(CACHE_FILES[5]), &vocab)?;
    let split = SplitFolksonomy {
        vocab,
        train,
        valid,
        test,
    };
    // Validates index ranges and pairwise disjointness.
    split.merged()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folksonomy::{split_assignments, Assignment, Folksonomy, SplitRatios};

    #[test]
    fn round_trip() {
        let raw: Vec<Assignment> = (0..60)
            .map(|i| Assignment::new(format!("u{}", i % 5), format!("t{}", i % 4), format!("d{}", i % 11)))
            .collect();
        let f = Folksonomy::from_assignments(&raw);
        let s = split_assignments(&f, SplitRatios::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cache(dir.path(), &s).unwrap();
        assert_eq!(read_cache(dir.path()).unwrap(), s);
    }

    #[test]
    fn rejects_unknown_token() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in CACHE_FILES.iter().zip(["u\n", "t\n", "d\n", "u\tt\tx\n", "", ""]) {
            fs::write(dir.path().join(name), body).unwrap();
        }
        assert!(matches!(read_cache(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn rejects_overlapping_splits() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in CACHE_FILES.iter().zip(["u\n", "t\n", "d\n", "u\tt\td\n", "u\tt\td\n", ""]) {
            fs::write(dir.path().join(name), body).unwrap();
        }
        assert!(read_cache(dir.path()).is_err());
    }
}
