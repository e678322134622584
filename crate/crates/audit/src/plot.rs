//! Long-format plot data: one `series,x,y` row per point.

use std::fs;
use std::path::Path;

use reach_core::audit::Cdf;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// CDF series are checked to be nondecreasing before they are written.
    pub cdf: bool,
}

impl Series {
    pub fn curve(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            cdf: false,
        }
    }
}

impl From<&Cdf> for Series {
    fn from(c: &Cdf) -> Self {
        Series {
            name: c.series.to_string(),
            points: c.points.clone(),
            cdf: true,
        }
    }
}

pub fn render_plotdata(series: &[Series]) -> AppResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| AppError::Usage(format!("cannot encode plot data: {e}"));
    w.write_record(["series", "x", "y"]).map_err(enc)?;
    for s in series {
        if s.cdf && s.points.windows(2).any(|p| p[1].1 < p[0].1 || p[1].0 < p[0].0) {
            return Err(AppError::Usage(format!("series {} is not a valid CDF", s.name)));
        }
        for &(x, y) in &s.points {
            w.write_record([s.name.as_str(), &x.to_string(), &y.to_string()])
                .map_err(enc)?;
        }
    }
    w.into_inner()
        .map_err(|e| AppError::Usage(format!("cannot encode plot data: {e}")))
}

pub fn emit_plotdata(path: &Path, series: &[Series]) -> AppResult<()> {
    let bytes = render_plotdata(series)?;
    fs::write(path, bytes).map_err(|e| AppError::io(format!("cannot write {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let out = render_plotdata(&[Series::curve("a", vec![(1.0, 0.5)])]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "series,x,y\na,1,0.5\n");
    }

    #[test]
    fn cdf_must_be_monotone() {
        let bad = Series {
            name: "c".into(),
            points: vec![(1.0, 0.6), (2.0, 0.4)],
            cdf: true,
        };
        assert!(render_plotdata(&[bad]).is_err());
        let cdf = Cdf::from_values("ok", vec![3.0, 1.0, 2.0, 2.0]);
        let out = String::from_utf8(render_plotdata(&[Series::from(&cdf)]).unwrap()).unwrap();
        assert_eq!(out, "series,x,y\nok,1,0.25\nok,2,0.75\nok,3,1\n");
    }
}
