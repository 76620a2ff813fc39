//! Writing a surrogate and measurements to disk and reading them back.

use thermotomo::io::{read_measurements, read_surrogate, write_measurements, write_surrogate};
use thermotomo::pipeline::{build_surrogate, ForwardSetup};
use thermotomo::surrogate::{add_noise, MeasurementSet};

fn main() -> thermotomo::Result<()> {
    let setup = ForwardSetup {
        per_axis: 3,
        degree: 1,
        nodes_per_side: 9,
        delta: 0.01,
        ..ForwardSetup::standard_2d()
    };
    let (s, _) = build_surrogate(&setup)?;
    let dir = std::env::temp_dir().join(format!("thermotomo-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let path = dir.join("surrogate.bin");
    write_surrogate(&path, &s)?;
    let back = read_surrogate(&path)?;
    println!("{} bytes, identical after reload: {}", std::fs::metadata(&path)?.len(), back == s);

    let (values, sigma) = add_noise(&s.eval_u(&vec![1.0; s.num_params()])?, 0.01, 42)?;
    let data = MeasurementSet {
        layout: s.layout().clone(),
        values,
        sigma,
        sigma0: 0.01,
        seed: 42,
    };
    let csv = dir.join("measurements.csv");
    write_measurements(&csv, &data)?;
    let text = std::fs::read_to_string(&csv)?;
    for line in text.lines().take(11) {
        println!("  {line}");
    }
    println!("measurements identical after reload: {}", read_measurements(&csv)? == data);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
