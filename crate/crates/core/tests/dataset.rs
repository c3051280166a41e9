use pcb_core::active_query::observe;
use pcb_core::dataset::{LabeledDataset, Record};
use pcb_core::oracle::{answer_feature_queries, true_label, ConceptId};
use pcb_core::pipeline::{render_pool, SimConfig};
use pcb_core::scene::{sample_scene, Catalog, RenderConfig, Workspace};
use pcb_core::{seed, Error};

fn privileged_only(concept: ConceptId, n: usize, masked: bool) -> LabeledDataset {
    let (catalog, ws) = (Catalog::primitives(), Workspace::default());
    let mut rng = seed::rng(1);
    let answers = answer_feature_queries(concept);
    let mut data = LabeledDataset::new(concept);
    for _ in 0..n {
        let scene = sample_scene(&catalog, &ws, concept, &mut rng).unwrap();
        data.records.push(Record {
            scene,
            privileged: observe(&scene, masked.then_some(&answers)),
            cloud: None,
            label: true_label(concept, &scene).unwrap(),
        });
    }
    data
}

fn rendered(n: usize) -> LabeledDataset {
    let sim = SimConfig {
        render: RenderConfig {
            points_per_object: 16,
            ..Default::default()
        },
        ..Default::default()
    };
    render_pool(ConceptId::Front, n, &Catalog::primitives(), &sim, 3).unwrap()
}

fn round_trip(data: &LabeledDataset, seed: u64) -> LabeledDataset {
    let mut buf = Vec::new();
    data.write_to(&mut buf, seed).unwrap();
    let (back, header) = LabeledDataset::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(header.seed, seed);
    assert_eq!(header.count, data.len());
    back
}

#[test]
fn privileged_records_round_trip_exactly() {
    for masked in [false, true] {
        let data = privileged_only(ConceptId::Upright, 50, masked);
        assert_eq!(round_trip(&data, 9), data);
    }
}

#[test]
fn rendered_records_round_trip_exactly() {
    let data = rendered(20);
    assert_eq!(round_trip(&data, 4), data);
}

#[test]
fn empty_dataset_round_trips() {
    let data = LabeledDataset::new(ConceptId::Near);
    assert_eq!(round_trip(&data, 0), data);
}

#[test]
fn header_describes_the_arrays() {
    let data = rendered(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("front.bin");
    data.save(&path, 77).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"PCBDATA1");
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    assert_eq!(header["dtype"], "f64le");
    assert_eq!(header["seed"], 77);
    assert_eq!(header["concept"], "front");
    let shapes: Vec<(String, Vec<usize>)> = header["arrays"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| (a["name"].as_str().unwrap().to_string(), serde_json::from_value(a["shape"].clone()).unwrap()))
        .collect();
    assert_eq!(
        shapes,
        [
            ("scenes".to_string(), vec![3, 30]),
            ("privileged".to_string(), vec![3, 30]),
            ("mask".to_string(), vec![3, 30]),
            ("labels".to_string(), vec![3]),
            ("clouds".to_string(), vec![3, 32, 4]),
        ]
    );
    let payload: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    assert_eq!(bytes.len(), 16 + len + 8 * payload);
    let (back, _) = LabeledDataset::load(&path).unwrap();
    assert_eq!(back, data);
}

#[test]
fn mixed_cloud_presence_is_rejected() {
    let mut data = rendered(2);
    data.records[1].cloud = None;
    assert!(matches!(data.write_to(&mut Vec::new(), 0), Err(Error::InvalidInput(_))));
}

#[test]
fn corrupt_files_are_format_errors() {
    let data = privileged_only(ConceptId::Near, 4, false);
    let mut buf = Vec::new();
    data.write_to(&mut buf, 0).unwrap();

    let mut bad_magic = buf.clone();
    bad_magic[0] = b'X';
    assert!(matches!(LabeledDataset::read_from(&mut bad_magic.as_slice()), Err(Error::Format(_))));

    let truncated = &buf[..buf.len() - 8];
    assert!(matches!(LabeledDataset::read_from(&mut &truncated[..]), Err(Error::Io(_))));

    // a label of 0.5 in the last slot
    let mut bad_label = buf.clone();
    let at = buf.len() - 8;
    bad_label[at..].copy_from_slice(&0.5f64.to_le_bytes());
    assert!(matches!(LabeledDataset::read_from(&mut bad_label.as_slice()), Err(Error::Format(_))));
}

#[test]
fn prefix_and_counts() {
    let data = privileged_only(ConceptId::Near, 40, false);
    let p = data.prefix(10);
    assert_eq!(p.len(), 10);
    assert_eq!(p.records[..], data.records[..10]);
    assert_eq!(data.labels().iter().filter(|l| **l == 1).count(), data.positives());
    assert_eq!(data.privileged_inputs().len(), 40);
}
