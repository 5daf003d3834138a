use std::io::Write;

use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;
use segpf::io::{read_checkpoint, read_dataset, read_trace, write_checkpoint, write_dataset, write_trace};
use segpf::CliError;
use segpf_core::dataset::build_samples;
use segpf_core::features::{FeatureConfig, InputEncoder, InputMode, OverflowPolicy};
use segpf_core::labeling::LabelConfig;
use segpf_core::model::{Model, ModelConfig};
use segpf_core::trace::{AddressConfig, MemoryAccess};

fn accesses() -> impl Strategy<Value = Vec<MemoryAccess>> {
    prop::collection::vec((0u64..1 << 40, any::<u64>(), any::<u64>()), 1..60).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (c, pc, a))| MemoryAccess::new(i as u64, c, pc, a))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_roundtrips_plain_and_gzip(trace in accesses()) {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("t.csv");
        write_trace(&plain, &trace).unwrap();
        prop_assert_eq!(&read_trace(&plain).unwrap(), &trace);

        let gz = dir.path().join("t.csv.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&std::fs::read(&plain).unwrap()).unwrap();
        std::fs::write(&gz, enc.finish().unwrap()).unwrap();
        prop_assert_eq!(&read_trace(&gz).unwrap(), &trace);
    }
}

#[test]
fn missing_trace_is_an_io_error() {
    let e = read_trace(std::path::Path::new("/nonexistent/t.csv")).unwrap_err();
    assert!(matches!(e, CliError::Io { .. }));
    assert_eq!(e.exit_code(), 5);
}

#[test]
fn dataset_roundtrips() {
    let addr = AddressConfig::default();
    let trace: Vec<MemoryAccess> = (0..80u64)
        .map(|i| MemoryAccess::new(i, 4 * i, 0x400 + i % 3, (1000 + 5 * i) << 6))
        .collect();
    let feats = FeatureConfig { history: 4, hash_bits: 16 };
    let labels = LabelConfig { window: 6, bound: 32, skip: 0 };
    for mode in [InputMode::Segments { bits: 6 }, InputMode::Delta] {
        let mut enc = InputEncoder::new(mode, 16, OverflowPolicy::MapToOov);
        let samples = build_samples(&trace, 0..80, &mut enc, &feats, &labels, &addr).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let width = samples[0].input.history.cols();
        write_dataset(&p, &samples, 4, width, 64).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), samples);
    }
}

#[test]
fn checkpoint_roundtrips_and_detects_corruption() {
    let cfg = ModelConfig {
        dim: 8,
        heads: 2,
        layers: 1,
        outputs: 16,
        history: 3,
        input_width: 10,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    write_checkpoint(&p, &model).unwrap();
    let back = read_checkpoint(&p).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params, model.params);

    let mut bytes = std::fs::read(&p).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(read_checkpoint(&p), Err(CliError::Format { .. })));

    std::fs::write(&p, b"SPDS").unwrap();
    assert!(read_checkpoint(&p).is_err());
}
