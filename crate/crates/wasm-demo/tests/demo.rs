use imc_wasm_demo::{branch_fit, course_run};

#[test]
fn branch_fit_shapes() {
    let fit = branch_fit(3, 0.05, 3, 0).unwrap();
    assert_eq!(fit.points.len(), fit.owner.len());
    assert_eq!(fit.points.len(), fit.weight.len());
    assert_eq!(fit.imc.len(), 3);
    assert_eq!(fit.em.len(), 3);
    assert!(fit.imc.iter().chain(&fit.em).all(|c| c.len() == fit.grid.len()));
    assert!(fit.owner.iter().all(|&k| k < 3));
    assert!(fit.weight.iter().all(|w| (0.0..=1.0).contains(w)));
    // every component has a sample it weights fully
    for k in 0..3 {
        if fit.owner.contains(&k) {
            assert!(fit.owner.iter().zip(&fit.weight).any(|(&o, &w)| o == k && w == 1.0));
        }
    }
}

#[test]
fn branch_fit_rejects_bad_input() {
    assert!(branch_fit(0, 0.05, 2, 0).is_err());
    assert!(branch_fit(2, -1.0, 2, 0).is_err());
}

#[test]
fn course_run_is_deterministic_and_serializes() {
    let a = course_run(1e-3, 2, 1, 10).unwrap();
    assert_eq!(a.paths.len(), 10);
    assert!((0.0..=1.0).contains(&a.success_rate));
    let b = course_run(1e-3, 2, 1, 10).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
