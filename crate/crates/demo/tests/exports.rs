use pulseflow_demo::{analyze, generate, mask, perturb};

fn values(v: &serde_json::Value) -> Vec<f64> {
    v["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn generated_series_reports_its_period() {
    let g = generate(400, 2, "20", "spike:100:3:5", 1).unwrap();
    let xs = values(&g);
    assert_eq!(xs.len(), 800);
    let labels = g["labels"].as_array().unwrap();
    assert_eq!(labels.iter().filter(|l| l.as_u64() == Some(1)).count(), 3);
    let a = analyze(&xs, 2, 3).unwrap();
    assert_eq!(a["global_period"], 20);
    assert_eq!(a["top_periods"][0], 20);
    assert_eq!(a["spectrum"].as_array().unwrap().len(), 201);
    assert_eq!(a["strength"].as_array().unwrap().len(), 2);
}

#[test]
fn perturbation_leaves_the_low_band_alone() {
    let xs = values(&generate(128, 1, "16", "", 2).unwrap());
    let p = perturb(&xs, 1, 0.25, 1.0, false, false, 3).unwrap();
    let k_h = p["split_bin"].as_u64().unwrap() as usize;
    assert_eq!(k_h, 32);
    let (before, after) = (p["before"].as_array().unwrap(), p["after"].as_array().unwrap());
    for f in 0..k_h {
        assert!((before[f].as_f64().unwrap() - after[f].as_f64().unwrap()).abs() < 1e-8);
    }
    assert!((k_h..=64).any(|f| (before[f].as_f64().unwrap() - after[f].as_f64().unwrap()).abs() > 1e-3));
    assert_eq!(values(&p).len(), 128);
}

#[test]
fn mask_patterns() {
    let m = mask(2, 8, false).unwrap();
    assert_eq!(m["bits"], serde_json::json!([0, 0, 1, 1, 0, 0, 1, 1]));
    assert_eq!(m["complement"], serde_json::json!([1, 1, 0, 0, 1, 1, 0, 0]));
    let h = mask(2, 6, true).unwrap();
    assert_eq!(h["bits"], serde_json::json!([0, 0, 0, 1, 1, 1]));
}

#[test]
fn bad_input_is_an_error() {
    assert!(mask(0, 8, false).is_err());
    assert!(generate(100, 1, "x", "", 0).is_err());
    assert!(analyze(&[1.0, 2.0, 3.0], 2, 1).is_err());
}
