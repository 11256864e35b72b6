use qmpe_core::dataset::{dataset_to_string, load_dataset, read_dataset, save_dataset};
use qmpe_core::dynamics::{prepare_tilted, Evolver};
use qmpe_core::ensemble::{load_matrix, save_matrix, DiagonalEnsemble};
use qmpe_core::hamiltonian::{build_xy, read_fields, write_fields};
use qmpe_core::protocol::{run_rm_experiment, Budget, ExperimentSetup};
use qmpe_core::spin::SiteSet;
use qmpe_core::Error;

fn small_dataset() -> qmpe_core::protocol::RMDataset {
    let ev = Evolver::new(3, Some(&build_xy(3, 1.0, 1.0).unwrap()), false).unwrap();
    let setup = ExperimentSetup {
        evolver: &ev,
        theta: 1.0,
        gamma: 0.5,
        scenario: "xy",
        realization: None,
        config_hash: "h",
    };
    run_rm_experiment(&setup, 0.25, Budget { n_u: 4, n_m: 3 }, 12).unwrap()
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.rmds");
    let ds = small_dataset();
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        dataset_to_string(&ds).unwrap()
    );
}

#[test]
fn truncated_dataset_reports_the_offending_line() {
    let text = dataset_to_string(&small_dataset()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"u\": [], \"s\": []}";
    let broken = lines.join("\n");
    match read_dataset(broken.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected parse error, got {other:?}"),
    }
    let short: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
    assert!(read_dataset(short.as_bytes()).is_err());
}

#[test]
fn diagonal_ensemble_matrix_round_trip() {
    let spec = build_xy(5, 1.0, 1.0).unwrap();
    let ev = Evolver::new(5, Some(&spec), false).unwrap();
    let de = DiagonalEnsemble::new(
        ev.spectrum.as_ref().unwrap(),
        &prepare_tilted(5, 0.8).unwrap(),
    )
    .unwrap();
    let rho = de
        .subsystem(&SiteSet::from_one_based(5, &[2, 3]).unwrap())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("de.dm");
    save_matrix(&rho, "diagonal ensemble", &path).unwrap();
    let back = load_matrix(&path).unwrap();
    assert_eq!(back.sites(), rho.sites());
    assert_eq!(back.matrix(), rho.matrix());
}

#[test]
fn disorder_fields_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fields.txt");
    let fields = vec![0.0, 1.5e3, 1.2345678901234567, 2.0 / 3.0];
    write_fields(&path, &fields).unwrap();
    assert_eq!(read_fields(&path).unwrap(), fields);
}
