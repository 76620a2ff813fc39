//! File formats: the binary surrogate container, measurement CSV files and
//! reconstruction reports.
//!
//! Container layout (all integers little-endian `u64` unless noted, all
//! sequences length-prefixed):
//!
//! ```text
//! magic "THRMSURR" | version u32
//! Q N P n | E.lo E.hi (f64)
//! spline dim, per_axis, degree | nodes_per_side, delta (f64), final_time (f64)
//! layout name (bytes) | Q_s Q_t | points (f64, Q_s*dim) | times (f64)
//! Λ offsets (u64, N+1) | Λ entries (u32 variable, u32 degree pairs)
//! V (f64, Q*N, row-major)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::inverse::ReconstructionResult;
use crate::spectral::{DegreeMatrix, ParameterInterval};
use crate::splines::{sample_grid, SplineBasis};
use crate::surrogate::{MeasurementLayout, MeasurementSet, ParametricSurrogate, SurrogateMetadata};

pub const CONTAINER_MAGIC: &[u8; 8] = b"THRMSURR";
pub const CONTAINER_VERSION: u32 = 1;
pub const CSV_VERSION: u32 = 1;
const LAYOUT_NAME: &str = "time-major";

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.0.write_all(&(v as u64).to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len())?;
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u64(b.len())?;
        Ok(self.0.write_all(b)?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn array<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated container: {e}")))?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.array()?);
        usize::try_from(v).map_err(|_| Error::Format(format!("length {v} does not fit in memory")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn len(&mut self, expected: Option<usize>, what: &str) -> Result<usize> {
        let n = self.u64()?;
        match expected {
            Some(e) if e != n => Err(Error::Format(format!("{what}: expected {e} entries, found {n}"))),
            _ => Ok(n),
        }
    }
    fn f64s(&mut self, expected: Option<usize>, what: &str) -> Result<Vec<f64>> {
        let n = self.len(expected, what)?;
        let mut raw = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Format(format!("{what} too large")))?];
        self.0
            .read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated {what}: {e}")))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
    fn bytes(&mut self, what: &str) -> Result<Vec<u8>> {
        let n = self.len(None, what)?;
        if n > 1 << 20 {
            return Err(Error::Format(format!("{what} implausibly long ({n} bytes)")));
        }
        let mut raw = vec![0u8; n];
        self.0
            .read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated {what}: {e}")))?;
        Ok(raw)
    }
}

/// Serializes a surrogate into any writer.
pub fn write_surrogate_to(out: impl Write, s: &ParametricSurrogate) -> Result<()> {
    let mut w = Writer(out);
    let lambda = s.degree_matrix();
    let meta = s.metadata();
    let layout = s.layout();
    w.0.write_all(CONTAINER_MAGIC)?;
    w.u32(CONTAINER_VERSION)?;
    w.u64(s.num_rows())?;
    w.u64(s.num_basis())?;
    w.u64(s.num_params())?;
    w.u64(lambda.total_degree())?;
    w.f64(s.interval().lo())?;
    w.f64(s.interval().hi())?;
    w.u64(meta.dim)?;
    w.u64(meta.per_axis)?;
    w.u64(meta.degree)?;
    w.u64(meta.nodes_per_side)?;
    w.f64(meta.delta)?;
    w.f64(meta.final_time)?;
    w.bytes(LAYOUT_NAME.as_bytes())?;
    w.u64(layout.num_points())?;
    w.u64(layout.num_times())?;
    let flat: Vec<f64> = layout.points.iter().flatten().copied().collect();
    w.f64s(&flat)?;
    w.f64s(&layout.times)?;
    w.u64(lambda.offsets().len())?;
    for &o in lambda.offsets() {
        w.u64(o)?;
    }
    w.u64(lambda.nnz())?;
    for (&v, &d) in lambda.raw_vars().iter().zip(lambda.raw_degs()) {
        w.u32(v)?;
        w.u32(d)?;
    }
    w.f64s(s.matrix())?;
    w.0.flush()?;
    Ok(())
}

/// Deserializes a surrogate, validating every declared size.
pub fn read_surrogate_from(input: impl Read) -> Result<ParametricSurrogate> {
    let mut r = Reader(input);
    let magic: [u8; 8] = r.array()?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::Format("not a surrogate container (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CONTAINER_VERSION,
        });
    }
    let q = r.u64()?;
    let n = r.u64()?;
    let p = r.u64()?;
    let _total_degree = r.u64()?;
    let interval = ParameterInterval::new(r.f64()?, r.f64()?)?;
    let meta = SurrogateMetadata {
        dim: r.u64()?,
        per_axis: r.u64()?,
        degree: r.u64()?,
        nodes_per_side: r.u64()?,
        delta: r.f64()?,
        final_time: r.f64()?,
    };
    let name = r.bytes("layout name")?;
    if name != LAYOUT_NAME.as_bytes() {
        return Err(Error::Format(format!("unsupported row layout {:?}", String::from_utf8_lossy(&name))));
    }
    let qs = r.u64()?;
    let qt = r.u64()?;
    if qs.checked_mul(qt) != Some(q) {
        return Err(Error::Format(format!("layout {qs} x {qt} does not match Q = {q}")));
    }
    let flat = r.f64s(qs.checked_mul(meta.dim), "measurement points")?;
    let points = flat.chunks_exact(meta.dim.max(1)).map(<[f64]>::to_vec).collect();
    let times = r.f64s(Some(qt), "measurement times")?;
    let layout = MeasurementLayout::new(points, times)?;
    let noff = r.len(Some(n + 1), "degree matrix offsets")?;
    let offsets = (0..noff).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let nnz = r.u64()?;
    if offsets.last() != Some(&nnz) {
        return Err(Error::Format("degree matrix offsets do not match its entry count".into()));
    }
    let mut vars = Vec::with_capacity(nnz);
    let mut degs = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        vars.push(r.u32()?);
        degs.push(r.u32()?);
    }
    let lambda = DegreeMatrix::from_parts(p, offsets, vars, degs)?;
    let v = r.f64s(q.checked_mul(n), "surrogate matrix")?;
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after surrogate matrix".into()));
    }
    ParametricSurrogate::from_parts(v, lambda, interval, layout, meta)
}

pub fn write_surrogate(path: &Path, s: &ParametricSurrogate) -> Result<()> {
    write_surrogate_to(BufWriter::new(File::create(path)?), s)
}

pub fn read_surrogate(path: &Path) -> Result<ParametricSurrogate> {
    read_surrogate_from(BufReader::new(File::open(path)?))
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// Writes measurements as CSV with a `# key=value` header.
pub fn write_measurements_to(mut out: impl Write, m: &MeasurementSet) -> Result<()> {
    let dim = m.layout.dim();
    writeln!(out, "# thermotomo measurements v{CSV_VERSION}")?;
    writeln!(out, "# sigma={}", m.sigma)?;
    writeln!(out, "# sigma0={}", m.sigma0)?;
    writeln!(out, "# seed={}", m.seed)?;
    writeln!(out, "# layout={LAYOUT_NAME}")?;
    writeln!(out, "# dim={dim}")?;
    writeln!(out, "# points={}", m.layout.num_points())?;
    writeln!(out, "# times={}", m.layout.num_times())?;
    writeln!(out, "{},t,value", AXES[..dim].join(","))?;
    for (q, v) in m.values.iter().enumerate() {
        let (x, t) = m.layout.coordinate(q);
        for c in x {
            write!(out, "{c},")?;
        }
        writeln!(out, "{t},{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_measurements(path: &Path, m: &MeasurementSet) -> Result<()> {
    write_measurements_to(BufWriter::new(File::create(path)?), m)
}

/// Reads a measurement CSV; errors carry the offending line number.
pub fn read_measurements_from(input: impl BufRead) -> Result<MeasurementSet> {
    let mut header = std::collections::HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut columns = None;
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(version) = rest.strip_prefix("thermotomo measurements v") {
                let found: u32 = version
                    .parse()
                    .map_err(|_| Error::Format(format!("line {lineno}: bad version tag")))?;
                if found != CSV_VERSION {
                    return Err(Error::Version {
                        found,
                        supported: CSV_VERSION,
                    });
                }
            } else if let Some((key, value)) = rest.split_once('=') {
                header.insert(key.trim().to_string(), value.trim().to_string());
            }
            continue;
        }
        if columns.is_none() {
            columns = Some(line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
        if Some(row.len()) != columns.as_ref().map(Vec::len) {
            return Err(Error::Format(format!("line {lineno}: wrong number of columns")));
        }
        rows.push(row);
    }
    let columns = columns.ok_or_else(|| Error::Format("missing column header".into()))?;
    let get = |key: &str| -> Result<&String> { header.get(key).ok_or_else(|| Error::Format(format!("missing header field {key}"))) };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("header field {key} is not an integer")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("header field {key} is not a number")))
    };
    if get("layout")? != LAYOUT_NAME {
        return Err(Error::Format(format!("unsupported row layout {}", get("layout")?)));
    }
    let dim = parse_usize("dim")?;
    let qs = parse_usize("points")?;
    let qt = parse_usize("times")?;
    if !(1..=3).contains(&dim) || columns.len() != dim + 2 {
        return Err(Error::Format(format!("columns {columns:?} do not match dim={dim}")));
    }
    if rows.len() != qs * qt {
        return Err(Error::Format(format!("expected {} rows, found {}", qs * qt, rows.len())));
    }
    let points: Vec<Vec<f64>> = rows[..qs].iter().map(|r| r[..dim].to_vec()).collect();
    let times: Vec<f64> = (0..qt).map(|k| rows[k * qs][dim]).collect();
    for (q, r) in rows.iter().enumerate() {
        let (p, t) = (&points[q % qs], times[q / qs]);
        if r[..dim] != p[..] || r[dim] != t {
            return Err(Error::Format(format!("row {} breaks the time-major layout", q + 1)));
        }
    }
    Ok(MeasurementSet {
        layout: MeasurementLayout::new(points, times)?,
        values: rows.iter().map(|r| r[dim + 1]).collect(),
        sigma: parse_f64("sigma")?,
        sigma0: parse_f64("sigma0")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Format("header field seed is not an integer".into()))?,
    })
}

pub fn read_measurements(path: &Path) -> Result<MeasurementSet> {
    read_measurements_from(BufReader::new(File::open(path)?))
}

/// Extra numbers for the reconstruction report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportExtras {
    pub target_misfit: Option<f64>,
    pub morozov_accepted: Option<bool>,
    pub elapsed_seconds: f64,
    pub warnings: Vec<String>,
}

/// Plain-text `key = value` reconstruction report.
pub fn write_report_to(mut out: impl Write, r: &ReconstructionResult, extras: &ReportExtras) -> Result<()> {
    writeln!(out, "lambda = {}", r.lambda)?;
    writeln!(out, "iterations = {}", r.iterations)?;
    writeln!(out, "converged = {}", r.converged)?;
    writeln!(out, "stop = {:?}", r.stop)?;
    writeln!(out, "misfit = {}", r.misfit)?;
    if let Some(t) = extras.target_misfit {
        writeln!(out, "noise_level = {t}")?;
    }
    if let Some(a) = extras.morozov_accepted {
        writeln!(out, "discrepancy_accepted = {a}")?;
    }
    if let Some(e) = r.approximation_error {
        writeln!(out, "approximation_error = {e}")?;
    }
    writeln!(out, "elapsed_seconds = {}", extras.elapsed_seconds)?;
    for w in &extras.warnings {
        writeln!(out, "warning = {w}")?;
    }
    let theta: Vec<String> = r.theta.iter().map(f64::to_string).collect();
    writeln!(out, "theta = {}", theta.join(","))?;
    out.flush()?;
    Ok(())
}

/// `a(x; θ)` on a regular plot grid; 3D output is the slices `x3 ∈ {0, 1/2, 1}`.
pub fn write_diffusivity_grid_to(mut out: impl Write, basis: &SplineBasis, theta: &[f64], per_axis: usize) -> Result<()> {
    let dim = basis.dim();
    writeln!(out, "{},a", AXES[..dim].join(","))?;
    let points: Vec<Vec<f64>> = if dim == 3 {
        let plane = sample_grid(2, per_axis);
        [0.0, 0.5, 1.0]
            .iter()
            .flat_map(|&z| plane.iter().map(move |p| vec![p[0], p[1], z]))
            .collect()
    } else {
        sample_grid(dim, per_axis)
    };
    for x in points {
        let a = basis.evaluate_diffusivity(theta, &x);
        let coords: Vec<String> = x.iter().map(f64::to_string).collect();
        writeln!(out, "{},{a}", coords.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::total_degree_indices;
    use crate::surrogate::{perimeter_points, standard_times};

    fn sample() -> ParametricSurrogate {
        let lambda = total_degree_indices(4, 2).unwrap();
        let layout = MeasurementLayout::new(perimeter_points(8).unwrap(), vec![0.01, 0.05, 0.09]).unwrap();
        let v = (0..layout.len() * lambda.len()).map(|k| (k as f64 * 0.123).sin() / 3.0).collect();
        let meta = SurrogateMetadata {
            dim: 2,
            per_axis: 2,
            degree: 1,
            nodes_per_side: 5,
            delta: 1e-3,
            final_time: 0.5,
        };
        ParametricSurrogate::from_parts(v, lambda, ParameterInterval::new(0.5, 2.0).unwrap(), layout, meta).unwrap()
    }

    #[test]
    fn container_round_trip_is_exact() {
        let s = sample();
        let mut buf = Vec::new();
        write_surrogate_to(&mut buf, &s).unwrap();
        let back = read_surrogate_from(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        let mut again = Vec::new();
        write_surrogate_to(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_containers_rejected() {
        let s = sample();
        let mut buf = Vec::new();
        write_surrogate_to(&mut buf, &s).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_surrogate_from(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(read_surrogate_from(bad.as_slice()), Err(Error::Version { found: 9, .. })));
        assert!(read_surrogate_from(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_surrogate_from(long.as_slice()).is_err());
    }

    #[test]
    fn measurement_csv_round_trip() {
        let layout = MeasurementLayout::new(perimeter_points(36).unwrap(), standard_times()).unwrap();
        let values: Vec<f64> = (0..layout.len()).map(|q| (q as f64 * 0.37).cos() * 1e-3 + 0.1).collect();
        let m = MeasurementSet {
            layout,
            values,
            sigma: 0.0123,
            sigma0: 0.001,
            seed: 99,
        };
        let mut buf = Vec::new();
        write_measurements_to(&mut buf, &m).unwrap();
        let back = read_measurements_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# sigma=0.0123"));
        assert!(text.contains("# seed=99"));
    }

    #[test]
    fn measurement_errors_name_the_line() {
        let text = "# thermotomo measurements v1\n# sigma=0\n# sigma0=0\n# seed=1\n# layout=time-major\n# dim=2\n# points=1\n# times=1\nx,y,t,value\n0,0,0.01,abc\n";
        match read_measurements_from(text.as_bytes()) {
            Err(Error::Format(msg)) => assert!(msg.contains("line 10"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let future = text.replace("v1", "v7");
        assert!(matches!(read_measurements_from(future.as_bytes()), Err(Error::Version { found: 7, .. })));
    }
}
