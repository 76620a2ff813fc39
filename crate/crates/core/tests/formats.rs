use proptest::prelude::*;
use thermotomo::io::{read_measurements, read_surrogate, read_surrogate_from, write_measurements, write_surrogate, write_surrogate_to};
use thermotomo::pipeline::{build_surrogate, ForwardSetup};
use thermotomo::spectral::{total_degree_indices, ParameterInterval};
use thermotomo::surrogate::{add_noise, lattice_boundary_points, perimeter_points, MeasurementLayout, MeasurementSet, ParametricSurrogate, SurrogateMetadata};
use thermotomo::Error;

fn toy_setup() -> ForwardSetup {
    ForwardSetup {
        per_axis: 3,
        degree: 1,
        total_degree: 2,
        nodes_per_side: 6,
        delta: 0.01,
        ..ForwardSetup::standard_2d()
    }
}

#[test]
fn built_container_round_trips_through_disk() {
    let (s, _) = build_surrogate(&toy_setup()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    write_surrogate(&path, &s).unwrap();
    let back = read_surrogate(&path).unwrap();
    assert_eq!(back, s);
    assert!(back.matrix().iter().zip(s.matrix()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let theta = vec![1.1; 9];
    assert_eq!(back.eval_u(&theta).unwrap(), s.eval_u(&theta).unwrap());
}

#[test]
fn forward_build_is_deterministic() {
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_surrogate_to(&mut a, &build_surrogate(&toy_setup()).unwrap().0).unwrap();
    write_surrogate_to(&mut b, &build_surrogate(&toy_setup()).unwrap().0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn measurement_file_round_trip_3d() {
    let layout = MeasurementLayout::new(lattice_boundary_points(4).unwrap(), vec![0.1, 0.2]).unwrap();
    let clean: Vec<f64> = (0..layout.len()).map(|q| 0.01 * q as f64).collect();
    let (values, sigma) = add_noise(&clean, 0.01, 5).unwrap();
    let m = MeasurementSet {
        layout,
        values,
        sigma,
        sigma0: 0.01,
        seed: 5,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_measurements(&path, &m).unwrap();
    assert_eq!(read_measurements(&path).unwrap(), m);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("x,y,z,t,value"));
}

#[test]
fn truncated_file_is_a_format_error() {
    let (s, _) = build_surrogate(&toy_setup()).unwrap();
    let mut buf = Vec::new();
    write_surrogate_to(&mut buf, &s).unwrap();
    for cut in [4, 20, 200, buf.len() - 1] {
        assert!(matches!(read_surrogate_from(&buf[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_containers_round_trip_bit_exactly(
        p in 1usize..6,
        n in 0usize..4,
        lo in 0.1f64..1.0,
        width in 0.1f64..3.0,
        times in 1usize..4,
        values in prop::collection::vec(-1e6f64..1e6, 1..64),
    ) {
        let lambda = total_degree_indices(p, n).unwrap();
        let layout = MeasurementLayout::new(
            perimeter_points(4).unwrap(),
            (1..=times).map(|k| k as f64 * 0.01).collect(),
        ).unwrap();
        let v: Vec<f64> = (0..layout.len() * lambda.len()).map(|k| values[k % values.len()] / (k + 1) as f64).collect();
        let meta = SurrogateMetadata { dim: 2, per_axis: 2, degree: 1, nodes_per_side: 3, delta: 0.01, final_time: 0.5 };
        let s = ParametricSurrogate::from_parts(v, lambda, ParameterInterval::new(lo, lo + width).unwrap(), layout, meta).unwrap();
        let mut buf = Vec::new();
        write_surrogate_to(&mut buf, &s).unwrap();
        let back = read_surrogate_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, s);
    }
}
