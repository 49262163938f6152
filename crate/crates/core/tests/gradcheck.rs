use detailnet::gradcheck::{check_family, run_suite, SuiteOptions, FAMILIES, REL_TOL};
use detailnet::Error;

#[test]
fn every_family_passes_on_two_seeds() {
    for seed in [0, 1] {
        let opts = SuiteOptions {
            seed,
            ..SuiteOptions::default()
        };
        let rows = run_suite(&opts).unwrap();
        assert_eq!(rows.len(), FAMILIES.len());
        for row in &rows {
            assert!(row.passed(), "seed {seed}: {row}");
            assert_eq!(row.instances, 5);
            assert!(row.coords > 0 && row.max_rel_err < REL_TOL);
            assert!(row.to_string().ends_with("PASS"));
        }
    }
}

#[test]
fn rows_are_reproducible_and_independent() {
    let opts = SuiteOptions::default();
    let alone = check_family("afb", &opts).unwrap();
    let suite = run_suite(&opts).unwrap();
    assert_eq!(suite.iter().find(|r| r.name == "afb").unwrap(), &alone);
}

#[test]
fn empty_and_unknown_rows() {
    let none = SuiteOptions {
        instances: 0,
        ..SuiteOptions::default()
    };
    assert!(!check_family("relu", &none).unwrap().passed());
    assert!(matches!(
        check_family("tanh", &SuiteOptions::default()),
        Err(Error::Usage(_))
    ));
}
