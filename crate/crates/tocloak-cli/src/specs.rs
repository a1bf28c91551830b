//! Coefficient and source specifiers used in configuration documents.
//!
//! Coefficients: `identity`, `constant:<v>`, `diag:<v1,...,vm>` or
//! `radial-table:<path>`, where the table holds `r value` lines (blank lines
//! and `#` comments allowed), interpolated linearly in `r` and held constant
//! beyond its ends. Sources: `none`, `gaussian:<x,y,sigma,amplitude>`,
//! `angular-mode:<n,amplitude>`.

use std::path::Path;

use tocloak::coeffs::{BlockCoefficient, CoefficientField, Domain};
use tocloak::source::SourceField;
use tocloak::{CMat, Point, C64};

#[derive(Clone, Debug, PartialEq)]
enum Profile {
    Diagonal(Vec<f64>),
    Table { radii: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    fn parse(spec: &str, m: usize, base: &Path) -> Result<Self, String> {
        let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "identity" if arg.is_empty() => Ok(Profile::Diagonal(vec![1.0; m])),
            "constant" => Ok(Profile::Diagonal(vec![number(arg)?; m])),
            "diag" => {
                let v = numbers(arg)?;
                if v.len() != m {
                    return Err(format!("diag has {} entries, expected m = {m}", v.len()));
                }
                Ok(Profile::Diagonal(v))
            }
            "radial-table" if !arg.is_empty() => read_table(&base.join(arg)),
            _ => Err(format!("unknown coefficient {spec:?} (identity, constant:<v>, diag:<v1,...>, radial-table:<path>)")),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Profile::Diagonal(v) => v,
            Profile::Table { values, .. } => values,
        }
    }

    fn breakpoints(&self) -> &[f64] {
        match self {
            Profile::Diagonal(_) => &[],
            Profile::Table { radii, .. } => radii,
        }
    }

    fn at(&self, r: f64, m: usize) -> CMat {
        match self {
            Profile::Diagonal(v) => CMat::from_diagonal(&tocloak::CVec::from_iterator(m, v.iter().map(|&x| C64::new(x, 0.0)))),
            Profile::Table { radii, values } => {
                let k = radii.partition_point(|&x| x <= r);
                let v = if k == 0 {
                    values[0]
                } else if k == radii.len() {
                    values[k - 1]
                } else {
                    let t = (r - radii[k - 1]) / (radii[k] - radii[k - 1]);
                    values[k - 1] + t * (values[k] - values[k - 1])
                };
                CMat::identity(m, m) * C64::new(v, 0.0)
            }
        }
    }
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

fn numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(number).collect()
}

fn read_table(path: &Path) -> Result<Profile, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let (mut radii, mut values) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [r, v] = cols[..] else {
            return Err(format!("{}:{}: expected `r value`", path.display(), i + 1));
        };
        radii.push(number(r)?);
        values.push(number(v)?);
    }
    if radii.is_empty() {
        return Err(format!("{} has no rows", path.display()));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(format!("{}: radii must be strictly increasing", path.display()));
    }
    Ok(Profile::Table { radii, values })
}

/// Medium on the disk of `radius` from the `A` and `B` specifiers; errors carry
/// the offending key (`"A"` or `"B"`).
pub fn parse_coefficients(
    a: &str,
    b: &str,
    m: usize,
    radius: f64,
    base: &Path,
) -> Result<CoefficientField, (&'static str, String)> {
    let pa = Profile::parse(a, m, base).map_err(|e| ("A", e))?;
    let pb = Profile::parse(b, m, base).map_err(|e| ("B", e))?;
    if let Some(v) = pa.values().iter().find(|&&v| !(v > 0.0)) {
        return Err(("A", format!("value {v} must be positive")));
    }
    let domain = Domain::Disk { radius };
    if let (Profile::Diagonal(_), Profile::Diagonal(_)) = (&pa, &pb) {
        let c = BlockCoefficient::isotropic(&pa.at(0.0, m), &pb.at(0.0, m));
        return Ok(CoefficientField::constant(domain, c));
    }
    let mut breaks: Vec<f64> =
        pa.breakpoints().iter().chain(pb.breakpoints()).copied().filter(|&r| r > 0.0 && r < radius).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    Ok(CoefficientField::from_fn(domain, m, true, move |p| {
        Ok(BlockCoefficient::isotropic(&pa.at(p.radius, m), &pb.at(p.radius, m)))
    })
    .with_breakpoints(breaks))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SourceSpec {
    None,
    Gaussian { center: Point, sigma: f64, amplitude: f64 },
    AngularMode { n: i64, amplitude: f64 },
}

impl SourceSpec {
    pub fn parse(spec: &str) -> Result<Self, String> {
        let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "none" if arg.is_empty() => Ok(SourceSpec::None),
            "gaussian" => {
                let v = numbers(arg)?;
                let [x, y, sigma, amplitude] = v[..] else {
                    return Err(format!("gaussian needs x,y,sigma,amplitude, got {arg:?}"));
                };
                if !(sigma > 0.0) {
                    return Err(format!("gaussian sigma {sigma} must be positive"));
                }
                Ok(SourceSpec::Gaussian { center: Point::new(x, y), sigma, amplitude })
            }
            "angular-mode" => {
                let parts: Vec<&str> = arg.split(',').collect();
                let [n, amplitude] = parts[..] else {
                    return Err(format!("angular-mode needs n,amplitude, got {arg:?}"));
                };
                let n = n.trim().parse().map_err(|_| format!("mode {n:?} is not an integer"))?;
                Ok(SourceSpec::AngularMode { n, amplitude: number(amplitude)? })
            }
            _ => Err(format!("unknown source {spec:?} (none, gaussian:<x,y,sigma,amplitude>, angular-mode:<n,amplitude>)")),
        }
    }
}

pub fn parse_source(spec: &SourceSpec, m: usize) -> SourceField {
    match *spec {
        SourceSpec::None => SourceField::zero(m),
        SourceSpec::Gaussian { center, sigma, amplitude } => SourceField::gaussian(m, center, sigma, amplitude),
        SourceSpec::AngularMode { n, amplitude } => SourceField::angular_mode(m, n, amplitude),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn constant_specifiers() {
        let f = parse_coefficients("constant:2.5", "diag:1,3", 2, 2.0, Path::new(".")).unwrap();
        let c = f.eval(Point::new(0.3, 0.1)).unwrap();
        assert_eq!(c.a[0][0][(1, 1)], C64::new(2.5, 0.0));
        assert_eq!(c.a[0][1][(0, 0)], C64::new(0.0, 0.0));
        assert_eq!(c.b[(1, 1)], C64::new(3.0, 0.0));
        assert!(f.is_radial);
        assert!(parse_coefficients("identity", "constant:x", 1, 2.0, Path::new(".")).is_err());
        assert_eq!(parse_coefficients("diag:0,1", "identity", 2, 2.0, Path::new(".")).unwrap_err().0, "A");
    }

    #[test]
    fn radial_table_interpolates() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# r value\n0 1\n1 3\n\n2 3").unwrap();
        let spec = format!("radial-table:{}", file.path().display());
        let f = parse_coefficients(&spec, "identity", 1, 2.0, Path::new("/")).unwrap();
        assert_eq!(f.breakpoints, vec![1.0]);
        assert!(f.is_radial);
        let a = |x: f64| f.eval(Point::new(0.0, x)).unwrap().a[1][1][(0, 0)].re;
        assert!((a(0.5) - 2.0).abs() < 1e-15);
        assert_eq!(a(1.5), 3.0);
        let bad = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(bad.path(), "1 2\n0 1\n").unwrap();
        assert!(parse_coefficients(&format!("radial-table:{}", bad.path().display()), "identity", 1, 2.0, Path::new("/"))
            .is_err());
    }

    #[test]
    fn source_specifiers() {
        assert_eq!(SourceSpec::parse("none").unwrap(), SourceSpec::None);
        assert_eq!(
            SourceSpec::parse("gaussian:0.5,-1,0.2,3").unwrap(),
            SourceSpec::Gaussian { center: Point::new(0.5, -1.0), sigma: 0.2, amplitude: 3.0 }
        );
        assert_eq!(SourceSpec::parse("angular-mode:-2,0.5").unwrap(), SourceSpec::AngularMode { n: -2, amplitude: 0.5 });
        for bad in ["gaussian:0,0,0,1", "gaussian:1,2", "angular-mode:1.5,1", "none:1", "delta:0,0"] {
            assert!(SourceSpec::parse(bad).is_err(), "{bad}");
        }
    }
}
