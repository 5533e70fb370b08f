use sqzt_core::homodyne::{gen_dataset, generate_record, DatasetReader, DatasetSpec, LabelKind, ParamRanges};

fn spec(kind: LabelKind) -> DatasetSpec {
    DatasetSpec {
        ranges: ParamRanges {
            r: (0.0, 0.5),
            n_th: (0.0, 0.2),
            ..ParamRanges::default()
        },
        count: 700,
        seq_len: 64,
        label_kind: kind,
        m: 12,
        seed: 42,
    }
}

fn generate_with_threads(spec: &DatasetSpec, threads: usize) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.sqzt");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| gen_dataset(spec, &path)).unwrap();
    std::fs::read(&path).unwrap()
}

#[test]
fn bytes_independent_of_thread_count() {
    for kind in [LabelKind::Params, LabelKind::Cholesky] {
        let s = spec(kind);
        let one = generate_with_threads(&s, 1);
        let four = generate_with_threads(&s, 4);
        assert_eq!(one, four, "{kind:?}");
    }
}

#[test]
fn records_regenerate_in_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.sqzt");
    let header = gen_dataset(&spec(LabelKind::Params), &path).unwrap();
    let mut reader = DatasetReader::open(&path).unwrap();
    for i in [0, 1, 511, 512, 699] {
        assert_eq!(reader.read_record(i).unwrap(), generate_record(&header, i).unwrap());
    }
    let other = DatasetSpec {
        seed: 43,
        ..spec(LabelKind::Params)
    };
    let path2 = dir.path().join("e.sqzt");
    gen_dataset(&other, &path2).unwrap();
    assert_ne!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}
