use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use pyo3::wrap_pymodule;

fn with_module<F: for<'py> FnOnce(Python<'py>, Bound<'py, PyModule>)>(f: F) {
    Python::attach(|py| {
        let m = wrap_pymodule!(tahq::tahq)(py).into_bound(py).cast_into::<PyModule>().unwrap();
        f(py, m);
    });
}

#[test]
fn quantize_round_trip() {
    with_module(|py, m| {
        let data: Vec<f32> = (0..256).map(|i| ((i * 37 % 101) as f32 - 50.0) / 25.0).collect();
        let blob = m.getattr("quantize").unwrap().call1((data.clone(), (1, 4, 64))).unwrap();
        let blob = blob.cast_into::<PyBytes>().unwrap();
        assert_eq!(&blob.as_bytes()[..4], b"TAHQ");
        let (restored, shape): (Vec<f32>, (usize, usize, usize)) =
            m.getattr("dequantize").unwrap().call1((blob.clone(),)).unwrap().extract().unwrap();
        assert_eq!(shape, (1, 4, 64));
        let err = data.iter().zip(&restored).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        // Half a 3-bit step over a range of 4.
        assert!(err <= 4.0 / 14.0 + 1e-6, "{err}");
        let info = m.getattr("blob_info").unwrap().call1((blob,)).unwrap().cast_into::<PyDict>().unwrap();
        let bits: Vec<u8> = info.get_item("bits").unwrap().unwrap().extract().unwrap();
        assert_eq!(bits.iter().filter(|&&b| b == 4).count(), 3);
        let _ = py;
    });
}

#[test]
fn config_validates_and_exposes_fields() {
    with_module(|py, m| {
        let cls = m.getattr("QuantConfig").unwrap();
        assert!(cls.call1((24,)).unwrap_err().is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let kwargs = PyDict::new(py);
        kwargs.set_item("allocation", "strided").unwrap();
        let cfg = cls.call((), Some(&kwargs)).unwrap();
        assert_eq!(cfg.getattr("allocation").unwrap().extract::<String>().unwrap(), "strided");
        assert_eq!(cfg.getattr("tile_size").unwrap().extract::<usize>().unwrap(), 32);
        assert!(cfg.setattr("allocation", "bogus").is_err());
    });
}

#[test]
fn pack_and_unpack() {
    with_module(|_, m| {
        let packed = m.getattr("pack_codes").unwrap().call1((vec![1u8, 2, 3], 2)).unwrap();
        assert_eq!(packed.cast_into::<PyBytes>().unwrap().as_bytes(), &[0b11_10_01]);
        let codes: Vec<u8> = m
            .getattr("unpack_codes")
            .unwrap()
            .call1((PyBytes::new(m.py(), &[0b11_10_01]), 3, 2))
            .unwrap()
            .extract()
            .unwrap();
        assert_eq!(codes, [1, 2, 3]);
        assert!(m.getattr("pack_codes").unwrap().call1((vec![4u8], 2)).is_err());
    });
}

#[test]
fn hadamard_inverts() {
    with_module(|_, m| {
        let tile = vec![0.5, -1.0, 8.0, 0.25];
        let h: Vec<f64> = m.getattr("forward_hadamard").unwrap().call1((tile.clone(), 2)).unwrap().extract().unwrap();
        let back: Vec<f64> = m.getattr("inverse_hadamard").unwrap().call1((h, 2)).unwrap().extract().unwrap();
        assert!(tile.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
    });
}

#[test]
fn train_returns_a_curve() {
    with_module(|py, m| {
        let kwargs = PyDict::new(py);
        kwargs.set_item("steps", 3).unwrap();
        let curve = m.getattr("train").unwrap().call((), Some(&kwargs)).unwrap();
        let rows: Vec<Bound<'_, PyDict>> = curve.extract().unwrap();
        assert_eq!(rows.len(), 3);
        let step: usize = rows[2].get_item("step").unwrap().unwrap().extract().unwrap();
        assert_eq!(step, 3);
        kwargs.set_item("task", "huge").unwrap();
        assert!(m.getattr("train").unwrap().call((), Some(&kwargs)).is_err());
    });
}
