use lobcal::dataset::CalibrationDataset;
use lobcal::pipeline::{
    build_dataset, build_datasets, end_to_end_recovery, ingest_historical, ingest_reader,
    observation_from_snapshots, simulate,
};
use lobcal::{ModelKind, PipelineError, RunConfig};
use lobcal_core::features::{self, FeatureKind};
use lobcal_core::record::{write_snapshots_csv, RecordError};
use lobcal_core::rng::derive_seed;

fn tiny(model: ModelKind, budget: usize) -> RunConfig {
    let mut c = RunConfig::for_model(model);
    c.budget = budget;
    c.len = 40;
    c.seed = 17;
    c.features = vec![FeatureKind::Vwap, FeatureKind::Touch];
    c.train.schedule.max_epochs = 2;
    c.train.flow.hidden = vec![16, 16];
    c.train.embedding = vec![16, 8];
    c.posterior_samples = 50;
    c.sbc_samples = 20;
    c.eval_points = 5;
    c
}

#[test]
fn budget_ten_splits_and_hash_is_stable() {
    for model in [ModelKind::Zi, ModelKind::Chiarella] {
        let c = tiny(model, 10);
        let a = build_dataset(&c).unwrap();
        let s = &a.header.splits;
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert!(s.is_partition(10));
        let b = build_dataset(&c).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let mut other = c.clone();
        other.seed += 1;
        assert_ne!(
            build_dataset(&other).unwrap().content_hash(),
            a.content_hash()
        );
    }
}

#[test]
fn datasets_share_simulations_and_round_trip() {
    let c = tiny(ModelKind::Zi, 20);
    let ds = build_datasets(&c).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds[0].theta, ds[1].theta);
    assert_eq!((ds[0].header.x_dim, ds[1].header.x_dim), (2 * 40, 4 * 40));
    for d in &ds {
        assert!(d.x.data().iter().all(|v| v.is_finite()));
        assert!(c.prior().contains(d.theta.row(0)));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.bin");
        d.save(&p).unwrap();
        assert_eq!(&CalibrationDataset::load(&p).unwrap(), d);
    }
}

#[test]
fn normalization_is_fitted_on_the_train_split_only() {
    let c = tiny(ModelKind::Zi, 20);
    let ds = build_dataset(&c).unwrap();
    let stats = &ds.header.feature.stats;
    assert_eq!(stats.n_series, ds.header.splits.train.len());
    assert_eq!(stats.fitted_on, features::DataSplit::Train);
    // standardized train rows have exactly zero mean and unit sd per channel
    let channels = stats.channels.len();
    let moments = |rows: &[usize], ch: usize| {
        let vals: Vec<f64> = rows
            .iter()
            .flat_map(|&i| ds.x.row(i).iter().skip(ch).step_by(channels).copied())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        (
            mean,
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt(),
        )
    };
    for ch in 0..channels {
        let (mean, sd) = moments(&ds.header.splits.train, ch);
        assert!(
            mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9,
            "channel {ch}: {mean} {sd}"
        );
    }
    let held_out: Vec<usize> = ds
        .header
        .splits
        .validation
        .iter()
        .chain(&ds.header.splits.test)
        .copied()
        .collect();
    assert!((0..channels).any(|ch| moments(&held_out, ch).0.abs() > 1e-6));
}

#[test]
fn ingestion_reproduces_simulated_features_bit_for_bit() {
    let c = tiny(ModelKind::Zi, 10);
    let ds = build_dataset(&c).unwrap();
    let theta = ds.theta.row(0).to_vec();
    let record = simulate(&c, &theta, derive_seed(5, 5)).unwrap();
    let direct = observation_from_snapshots(&record.snapshots, &ds.header.feature).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("snap.csv");
    record
        .write_snapshots_csv(std::fs::File::create(&p).unwrap())
        .unwrap();
    let ingested = ingest_historical(&p, &ds.header.feature).unwrap();
    assert_eq!(
        direct.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        ingested.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn missing_column_is_named() {
    let c = tiny(ModelKind::Zi, 10);
    let ds = build_dataset(&c).unwrap();
    let csv = "timestep,best_bid,best_bid_vol,best_ask,mid,last_trade\n1,100,5,101,100.5,\n";
    match ingest_reader(csv.as_bytes(), &ds.header.feature) {
        Err(PipelineError::Record(RecordError::MissingColumn(col))) => {
            assert_eq!(col, "best_ask_vol")
        }
        other => panic!("{other:?}"),
    }
    let err = ingest_reader(csv.as_bytes(), &ds.header.feature).unwrap_err();
    assert!(err.to_string().contains("best_ask_vol"));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn gaps_are_carried_forward() {
    let c = tiny(ModelKind::Zi, 10);
    let ds = build_dataset(&c).unwrap();
    let record = simulate(&c, ds.theta.row(1), 9).unwrap();
    // drop a block of ticks in the middle of the session
    let gappy: Vec<_> = record
        .snapshots
        .iter()
        .filter(|s| !(10..=25).contains(&s.timestep))
        .cloned()
        .collect();
    let mut buf = Vec::new();
    write_snapshots_csv(&gappy, &mut buf).unwrap();
    let x = ingest_reader(buf.as_slice(), &ds.header.feature).unwrap();
    assert_eq!(x.len(), ds.header.x_dim);
    assert!(x.iter().all(|v| v.is_finite()));
    // every tick inside the gap repeats the value from the tick before it
    for k in 10..=25usize {
        assert_eq!(x[2 * (k - 1)..2 * k], x[2 * 8..2 * 9], "tick {k}");
    }
}

#[test]
fn short_record_is_a_data_error() {
    let c = tiny(ModelKind::Zi, 10);
    let ds = build_dataset(&c).unwrap();
    let mut short = c.clone();
    short.len = 10;
    let record = simulate(&short, ds.theta.row(0), 3).unwrap();
    let err = observation_from_snapshots(&record.snapshots, &ds.header.feature).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn recovery_report_schema_and_determinism() {
    let c = tiny(ModelKind::Chiarella, 40);
    let a = end_to_end_recovery(&c).unwrap();
    let json: serde_json::Value = serde_json::to_value(&a).unwrap();
    for key in [
        "model",
        "seed",
        "config_hash",
        "budget",
        "len",
        "names",
        "truth",
        "facts_at_truth",
        "features",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let feats = json["features"].as_array().unwrap();
    assert_eq!(feats.len(), 2);
    assert_eq!(feats[0]["feature"], "vwap");
    assert_eq!(feats[1]["feature"], "touch");
    for f in feats {
        for key in [
            "dataset_hash",
            "model_hash",
            "training",
            "posterior",
            "truth_in_90",
            "rmse",
            "sbc",
            "facts_at_posterior_mean",
        ] {
            assert!(f.get(key).is_some(), "missing {key}");
        }
        for key in [
            "mean",
            "sd",
            "baseline_mean",
            "per_dim",
            "mean_posterior_sd",
        ] {
            assert!(f["rmse"].get(key).is_some(), "missing rmse.{key}");
        }
        assert_eq!(f["posterior"]["mean"].as_array().unwrap().len(), 6);
    }
    let b = end_to_end_recovery(&c).unwrap();
    assert_eq!(
        serde_json::to_vec(&a).unwrap(),
        serde_json::to_vec(&b).unwrap()
    );
}

#[test]
fn config_toml_round_trip_and_rejects_unknown_keys() {
    let c = tiny(ModelKind::Chiarella, 30);
    let back = RunConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back.hash(), c.hash());
    assert!(RunConfig::from_toml("bugdet = 3").is_err());
    let partial = RunConfig::from_toml("model = \"chiarella\"\nbudget = 12").unwrap();
    assert_eq!(
        (partial.model, partial.budget, partial.len),
        (ModelKind::Chiarella, 12, 600)
    );
}
