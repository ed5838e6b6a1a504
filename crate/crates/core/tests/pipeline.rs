use hdmf_core::autoencoder::Architecture;
use hdmf_core::checkpoint::{decode_checkpoint, encode_towers, Model};
use hdmf_core::eval::{evaluate_scorer, predict_scores_hdmf, DEFAULT_CUTOFFS};
use hdmf_core::folksonomy::{read_cache, split_assignments, write_cache, Folksonomy, SplitRatios};
use hdmf_core::synthetic::{planted_assignments, PlantedConfig};
use hdmf_core::train::{train_hdmf, PreparedData, TrainConfig};

#[test]
fn planted_data_through_training_checkpoint_and_evaluation() {
    let raw = planted_assignments(&PlantedConfig::default(), 6);
    let folk = Folksonomy::from_assignments(&raw).filter_infrequent_tags(2).unwrap();
    let split = split_assignments(&folk, SplitRatios::default(), 6).unwrap();

    let dir = tempfile::tempdir().unwrap();
    write_cache(dir.path(), &split).unwrap();
    let split = read_cache(dir.path()).unwrap();
    let data = PreparedData::from_split(&split, false).unwrap();

    let mut cfg = TrainConfig::new(Architecture::new(data.tags(), vec![24, 12]).unwrap());
    cfg.batch_pairs = 32;
    cfg.max_epochs = 15;
    cfg.seed = 6;
    let (towers, log) = train_hdmf(&data, &cfg).unwrap();
    assert!(log.epochs.len() <= 15);

    let Model::Hdmf(restored) = decode_checkpoint(&encode_towers(&towers)).unwrap() else {
        panic!("expected an HDMF checkpoint");
    };
    let score = |t| {
        let s = predict_scores_hdmf(t, &data.user_profiles, &data.item_profiles).unwrap();
        evaluate_scorer(&s, &data.validation.train_items, &data.test_relevance, &DEFAULT_CUTOFFS).unwrap()
    };
    let report = score(&towers);
    assert_eq!(report, score(&restored));
    assert!(report.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(report.user_count, data.test_relevance.len());
}
