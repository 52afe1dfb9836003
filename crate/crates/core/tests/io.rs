use famgp::data::{gen_correlated, gen_sinusoids, SinusoidConfig};
use famgp::io::{read_table, write_table, Model, NumericTable, Table};
use famgp::*;
use nalgebra::DMatrix;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn table_round_trip_keeps_missing_fields() {
    let t = Table {
        x: vec![-1.0, 0.25, 1.0 / 3.0],
        columns: vec![vec![Some(1.5), None, Some(-2.0e-17)], vec![None, Some(3.0), Some(0.1)]],
    };
    let mut buf = Vec::new();
    write_table(&t, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("x,y1,y2\n"));
    assert!(!text.contains('\r'));
    assert_eq!(read_table(buf.as_slice()).unwrap(), t);
}

#[test]
fn header_errors_name_the_missing_column() {
    let e = read_table("t,y1\n0,1\n".as_bytes()).unwrap_err().to_string();
    assert!(e.contains("column x"), "{e}");
    let e = read_table("x\n0\n".as_bytes()).unwrap_err().to_string();
    assert!(e.contains("column y1"), "{e}");
    let e = read_table("x,y1,y3\n0,1,2\n".as_bytes()).unwrap_err().to_string();
    assert!(e.contains("column y2"), "{e}");
    let e = read_table("x,y1\n0,abc\n".as_bytes()).unwrap_err().to_string();
    assert!(e.contains("y1"), "{e}");
}

#[test]
fn single_output_model_round_trip_is_exact() {
    let d = gen_sinusoids(3, &SinusoidConfig { n: 300, ..Default::default() }).unwrap();
    let ds = d.dataset(5.0).unwrap();
    let xs: Vec<f64> = (0..57).map(|i| -4.9 + 0.17 * i as f64).collect();
    for params in [
        KernelParams::chebyshev(0.97, 0.93).unwrap(),
        KernelParams::squared_exponential(0.08, 1.0).unwrap(),
        KernelParams::periodic(0.2, 0.6).unwrap(),
    ] {
        let n = if params.kind() == KernelKind::Periodic { 21 } else { 40 };
        let model = Model::Single(fit(&ds, &ModelSpec::new(params, n).with_signal_variance(2.5)).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        let a = model.predict_table(&xs, &[0, 2], true).unwrap();
        let b = back.predict_table(&xs, &[0, 2], true).unwrap();
        assert_eq!(a.headers, vec!["x", "mean_1", "var_1", "d2_mean_1", "d2_var_1"]);
        for (ca, cb) in a.columns.iter().zip(&b.columns) {
            assert!(max_abs_diff(ca, cb) < 1e-12);
        }
    }
}

#[test]
fn multi_output_model_round_trip_is_exact() {
    let kf = DMatrix::from_row_slice(2, 2, &[1.0, -0.9, -0.9, 1.2]);
    let cd = gen_correlated(4, 120, 0.2, &kf, 0.05).unwrap();
    let ds = cd.dataset.mask_output(1, |x| x > 0.3).unwrap();
    let params = KernelParams::squared_exponential(0.2, 1.0).unwrap();
    let model = Model::Multi(mo_fit(&ds, &params, 30, &CoregionalizationMatrix::from_kf(&kf).unwrap()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mo.json");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.outputs(), 2);
    let xs: Vec<f64> = (0..40).map(|i| -0.95 + 0.05 * i as f64).collect();
    let a = model.predict_table(&xs, &[0, 1], true).unwrap();
    let b = back.predict_table(&xs, &[0, 1], true).unwrap();
    assert_eq!(a.headers.len(), 9);
    for (ca, cb) in a.columns.iter().zip(&b.columns) {
        assert!(max_abs_diff(ca, cb) < 1e-12);
    }
}

#[test]
fn corrupted_model_documents_are_rejected() {
    let d = gen_sinusoids(1, &SinusoidConfig { n: 50, ..Default::default() }).unwrap();
    let model = Model::Single(fit(&d.dataset(5.0).unwrap(), &ModelSpec::new(KernelParams::chebyshev(0.9, 0.9).unwrap(), 10)).unwrap());
    let good = model.to_document();
    let mut doc = good.clone();
    doc.schema_version = 99;
    assert!(Model::from_document(&doc).is_err());
    let mut doc = good.clone();
    doc.lambda[3] *= 2.0;
    assert!(Model::from_document(&doc).is_err());
    let mut doc = good;
    doc.g.pop();
    assert!(Model::from_document(&doc).is_err());
}

#[test]
fn numeric_table_round_trip() {
    let t = NumericTable { headers: vec!["x".into(), "mean_1".into()], columns: vec![vec![0.1, 1e-300], vec![-3.0, 1.0 / 7.0]] };
    let mut buf = Vec::new();
    t.write(&mut buf).unwrap();
    assert_eq!(NumericTable::read(buf.as_slice()).unwrap(), t);
}
