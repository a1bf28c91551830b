//! Structured polar triangulations of layered disks and the mesh text format.

use std::fmt::Write as _;
use std::path::Path;

use crate::xform::DiffeoMap;
use crate::{Error, Point, Result};

/// Smallest radial spacing at an interface, as a fraction of the layer size.
const INTERFACE_REFINEMENT: f64 = 0.25;
/// Growth factor of radial spacings away from interfaces.
pub const GRADING_RATIO: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Outer,
    Interface,
}

impl BoundaryTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryTag::Outer => "outer",
            BoundaryTag::Interface => "interface",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "outer" => Some(BoundaryTag::Outer),
            "interface" => Some(BoundaryTag::Interface),
            _ => None,
        }
    }
}

/// Circle of nodes from the polar generator (positions before any node map).
#[derive(Clone, Debug, PartialEq)]
pub struct Ring {
    pub radius: f64,
    pub nodes: Vec<usize>,
    pub angles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<([usize; 2], BoundaryTag)>,
    pub h: f64,
    /// Node rings of the generator, innermost first (empty for meshes read from files).
    pub rings: Vec<Ring>,
}

fn signed_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * ((b - a).perp(&(c - a)))
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(&self.nodes[a], &self.nodes[b], &self.nodes[c])
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t];
        (self.nodes[a] + self.nodes[b] + self.nodes[c]) / 3.0
    }

    /// Inradius of triangle `t`.
    pub fn inradius(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        let s = 0.5 * ((b - a).norm() + (c - b).norm() + (a - c).norm());
        self.triangle_area(t).abs() / s
    }

    /// Distinct nodes on edges with the given tag, in increasing index order.
    pub fn tagged_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|(_, t)| *t == tag)
            .flat_map(|(e, _)| e.iter().copied())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Outer boundary nodes.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.tagged_nodes(BoundaryTag::Outer)
    }

    /// Checks positive areas, index bounds, closed tagged curves, and that every
    /// interior edge is shared by exactly two triangles.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut edges: std::collections::HashMap<(usize, usize), usize> = std::collections::HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!("triangle {t} references a missing node")));
            }
            if !(self.triangle_area(t) > 0.0) {
                return Err(Error::Mesh(format!("triangle {t} has nonpositive area")));
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut degree = vec![0usize; n];
        let mut outer_edges = std::collections::HashSet::new();
        for (e, tag) in &self.boundary_edges {
            if e.iter().any(|&i| i >= n) {
                return Err(Error::Mesh("boundary edge references a missing node".into()));
            }
            let key = (e[0].min(e[1]), e[0].max(e[1]));
            match edges.get(&key) {
                None => return Err(Error::Mesh(format!("boundary edge {key:?} is not a triangle edge"))),
                Some(&c) if *tag == BoundaryTag::Outer && c != 1 => {
                    return Err(Error::Mesh(format!("outer edge {key:?} is shared by {c} triangles")))
                }
                _ => {}
            }
            if *tag == BoundaryTag::Outer {
                outer_edges.insert(key);
            }
            degree[e[0]] += 1;
            degree[e[1]] += 1;
        }
        if degree.iter().any(|&d| d != 0 && d != 2) {
            return Err(Error::Mesh("tagged edges do not form closed curves".into()));
        }
        for (key, &count) in &edges {
            if count > 2 || (count == 1 && !outer_edges.contains(key)) {
                return Err(Error::Mesh(format!("edge {key:?} is nonconforming")));
            }
        }
        Ok(())
    }

    /// The same connectivity with every node moved by `map` (which must be
    /// orientation preserving on the mesh).
    pub fn mapped(&self, map: &DiffeoMap) -> Result<Mesh> {
        let nodes = self.nodes.iter().map(|&p| map.forward(p)).collect::<Result<Vec<_>>>()?;
        self.with_nodes(nodes)
    }

    /// The same connectivity with nodes moved by an arbitrary function.
    pub fn mapped_by<F: Fn(Point) -> Result<Point>>(&self, f: F) -> Result<Mesh> {
        let nodes = self.nodes.iter().map(|&p| f(p)).collect::<Result<Vec<_>>>()?;
        self.with_nodes(nodes)
    }

    fn with_nodes(&self, nodes: Vec<Point>) -> Result<Mesh> {
        let out = Mesh { nodes, ..self.clone() };
        for t in 0..out.triangles.len() {
            if !(out.triangle_area(t) > 0.0) {
                return Err(Error::Mesh(format!("mapped triangle {t} is inverted or degenerate")));
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("meshfmt 1\n");
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {}", p[0], p[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "boundary {}", self.boundary_edges.len());
        for (i, (e, tag)) in self.boundary_edges.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", e[0], e[1], tag.as_str());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let bad = |msg: String| Error::Mesh(msg);
        match lines.next() {
            Some("meshfmt 1") => {}
            other => return Err(bad(format!("unknown mesh header {other:?}"))),
        }
        let mut section = |name: &str| -> Result<Vec<Vec<String>>> {
            let head = lines.next().ok_or_else(|| bad(format!("missing '{name}' section")))?;
            let mut parts = head.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected '{name}' section, found '{head}'")));
            }
            let count: usize = parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(format!("bad count in '{head}'")))?;
            (0..count)
                .map(|k| {
                    let line = lines.next().ok_or_else(|| bad(format!("'{name}' section is truncated")))?;
                    let fields: Vec<String> = line.split_whitespace().map(String::from).collect();
                    if fields.first().and_then(|f| f.parse::<usize>().ok()) != Some(k) {
                        return Err(bad(format!("'{name}' entry {k} is out of order: '{line}'")));
                    }
                    Ok(fields)
                })
                .collect()
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Mesh(format!("bad number '{s}'")));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Mesh(format!("bad index '{s}'")));
        let nodes = section("nodes")?
            .iter()
            .map(|f| match f.as_slice() {
                [_, x, y] => Ok(Point::new(num(x)?, num(y)?)),
                _ => Err(bad(format!("bad node line {f:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let triangles = section("triangles")?
            .iter()
            .map(|f| match f.as_slice() {
                [_, a, b, c] => Ok([idx(a)?, idx(b)?, idx(c)?]),
                _ => Err(bad(format!("bad triangle line {f:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let boundary_edges = section("boundary")?
            .iter()
            .map(|f| match f.as_slice() {
                [_, a, b, t] => {
                    let tag = BoundaryTag::parse(t).ok_or_else(|| bad(format!("unknown tag '{t}'")))?;
                    Ok(([idx(a)?, idx(b)?], tag))
                }
                _ => Err(bad(format!("bad boundary line {f:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let h = triangles
            .iter()
            .flat_map(|t: &[usize; 3]| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .filter(|&(a, b)| a < nodes.len() && b < nodes.len())
            .map(|(a, b)| (nodes[a] - nodes[b]).norm())
            .fold(0.0, f64::max);
        let mesh = Mesh { nodes, triangles, boundary_edges, h, rings: Vec::new() };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Mesh> {
        Mesh::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Radial levels of one layer `[lo, hi]`, graded toward the ends flagged as interfaces.
fn layer_levels(lo: f64, hi: f64, h: f64, fine_lo: Option<f64>, fine_hi: Option<f64>) -> Vec<f64> {
    let spacing = |r: f64| {
        let mut s = h;
        if let Some(f) = fine_lo {
            s = s.min(f + (GRADING_RATIO - 1.0) * (r - lo));
        }
        if let Some(f) = fine_hi {
            s = s.min(f + (GRADING_RATIO - 1.0) * (hi - r));
        }
        s
    };
    let mut p = vec![lo];
    let mut r = lo;
    while r < hi {
        r += spacing(r).max(1e-300);
        p.push(r);
    }
    // drop a final sliver, then stretch onto [lo, hi]
    let k = p.len() - 1;
    if k >= 2 && (hi - p[k - 1]) < 0.5 * (p[k] - p[k - 1]) {
        p.pop();
    }
    let end = *p.last().expect("nonempty");
    let scale = (hi - lo) / (end - lo);
    let mut out: Vec<f64> = p.iter().map(|&x| lo + (x - lo) * scale).collect();
    let last = out.len() - 1;
    out[last] = hi;
    out
}

/// Disk of radius `radii.last()` with interface circles at the other radii,
/// uniform nominal size `h`.
pub fn generate_disk_mesh(radii: &[f64], h: f64) -> Result<Mesh> {
    let layers: Vec<(f64, f64)> = radii.iter().map(|&r| (r, h)).collect();
    generate_layered_mesh(&layers)
}

/// Disk made of layers `(outer radius, element size)`, innermost first. Radial
/// spacing is refined to a quarter of the smaller adjacent element size at
/// interface circles and grows by [`GRADING_RATIO`] away from them; nodes on
/// the circles lie exactly at the layer radii.
pub fn generate_layered_mesh(layers: &[(f64, f64)]) -> Result<Mesh> {
    layered_mesh(layers, None)
}

/// As [`generate_layered_mesh`], for a mesh that will be moved by a radial
/// map `r -> radial(r)`: ring counts are raised until, after the map, the
/// sagitta of every ring chord is at most `flatness` times the radial gap to
/// the neighbouring rings. Returns the unmapped mesh.
pub fn generate_layered_mesh_for_map(
    layers: &[(f64, f64)],
    radial: &dyn Fn(f64) -> f64,
    flatness: f64,
) -> Result<Mesh> {
    if !(flatness > 0.0) {
        return Err(Error::Mesh(format!("flatness {flatness} must be positive")));
    }
    layered_mesh(layers, Some((radial, flatness)))
}

fn layered_mesh(layers: &[(f64, f64)], mapped: Option<(&dyn Fn(f64) -> f64, f64)>) -> Result<Mesh> {
    if layers.is_empty() {
        return Err(Error::Mesh("no layers".into()));
    }
    let mut prev = 0.0;
    for &(r, h) in layers {
        if !(r > prev) {
            return Err(Error::Mesh(format!("radii must be strictly increasing (got {r} after {prev})")));
        }
        if !(h > 0.0) {
            return Err(Error::Mesh(format!("element size {h} must be positive")));
        }
        if h > r - prev {
            return Err(Error::Mesh(format!(
                "element size {h} is too large to resolve the layer [{prev}, {r}]"
            )));
        }
        prev = r;
    }
    // radial levels and local element sizes
    let mut levels: Vec<(f64, f64, bool)> = vec![(0.0, layers[0].1, false)];
    for (k, &(hi, h)) in layers.iter().enumerate() {
        let lo = if k == 0 { 0.0 } else { layers[k - 1].0 };
        let fine_lo = (k > 0).then(|| INTERFACE_REFINEMENT * h.min(layers[k - 1].1));
        let fine_hi = layers.get(k + 1).map(|&(_, h2)| INTERFACE_REFINEMENT * h.min(h2));
        let lv = layer_levels(lo, hi, h, fine_lo, fine_hi);
        let last = lv.len() - 1;
        for (j, &r) in lv.iter().enumerate().skip(1) {
            let is_interface = j == last && k + 1 < layers.len();
            levels.push((r, h, is_interface));
        }
    }
    let mut nodes = vec![Point::zeros()];
    let mut rings: Vec<Ring> = Vec::new();
    for (j, &(r, h, _)) in levels.iter().enumerate().skip(1) {
        let below = r - levels[j - 1].0;
        let above = levels.get(j + 1).map_or(below, |l| l.0 - r);
        let hmin = levels.get(j + 1).map_or(h, |l| l.1.min(h));
        let ds = hmin.min(2.0 * below.min(above));
        let mut count = (2.0 * std::f64::consts::PI * r / ds).ceil() as usize;
        if let Some((f, flatness)) = mapped {
            let rho = f(r);
            let gap_below = rho - f(levels[j - 1].0);
            let gap = levels.get(j + 1).map_or(gap_below, |l| gap_below.min(f(l.0) - rho));
            // sagitta rho (1 - cos(pi / N)) ~ rho pi^2 / (2 N^2)
            let n = std::f64::consts::PI * (rho / (2.0 * flatness * gap)).sqrt();
            count = count.max(n.ceil() as usize);
        }
        // even counts keep the mesh symmetric under y -> -y
        let count = count.max(6).next_multiple_of(2);
        let start = nodes.len();
        let angles: Vec<f64> = (0..count).map(|i| 2.0 * std::f64::consts::PI * i as f64 / count as f64).collect();
        for &t in &angles {
            nodes.push(Point::new(r * t.cos(), r * t.sin()));
        }
        rings.push(Ring { radius: r, nodes: (start..start + count).collect(), angles });
    }
    let mut triangles = Vec::new();
    let orient = |tri: [usize; 3], nodes: &[Point]| {
        if signed_area(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]) > 0.0 {
            tri
        } else {
            [tri[0], tri[2], tri[1]]
        }
    };
    // center fan
    let first = &rings[0];
    for i in 0..first.nodes.len() {
        let t = [0, first.nodes[i], first.nodes[(i + 1) % first.nodes.len()]];
        triangles.push(orient(t, &nodes));
    }
    for w in rings.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (na, nb) = (a.nodes.len(), b.nodes.len());
        let (mut i, mut j) = (0usize, 0usize);
        while i < na || j < nb {
            let advance_a = j >= nb || (i < na && (i + 1) * nb <= (j + 1) * na);
            if advance_a {
                let t = [a.nodes[i], a.nodes[(i + 1) % na], b.nodes[j % nb]];
                triangles.push(orient(t, &nodes));
                i += 1;
            } else {
                let t = [a.nodes[i % na], b.nodes[(j + 1) % nb], b.nodes[j]];
                triangles.push(orient(t, &nodes));
                j += 1;
            }
        }
    }
    let mut boundary_edges = Vec::new();
    for (ring, &(_, _, is_interface)) in rings.iter().zip(levels.iter().skip(1)) {
        let last = std::ptr::eq(ring, rings.last().expect("rings"));
        if !(is_interface || last) {
            continue;
        }
        let tag = if last { BoundaryTag::Outer } else { BoundaryTag::Interface };
        let n = ring.nodes.len();
        for i in 0..n {
            boundary_edges.push(([ring.nodes[i], ring.nodes[(i + 1) % n]], tag));
        }
    }
    let h = layers.iter().map(|l| l.1).fold(0.0, f64::max);
    let mesh = Mesh { nodes, triangles, boundary_edges, h, rings };
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_disk_quality_and_tags() {
        let m = generate_disk_mesh(&[2.0], 0.2).unwrap();
        assert!(m.boundary_edges.iter().all(|(_, t)| *t == BoundaryTag::Outer));
        let q = (0..m.triangles.len()).map(|t| m.inradius(t) / 0.2).fold(f64::INFINITY, f64::min);
        assert!(q >= 0.2, "quality {q}");
        let area: f64 = (0..m.triangles.len()).map(|t| m.triangle_area(t)).sum();
        assert!((area - 4.0 * std::f64::consts::PI).abs() < 0.1);
    }

    #[test]
    fn interface_nodes_on_circle() {
        let m = generate_disk_mesh(&[1.0, 2.0], 0.1).unwrap();
        let iface = m.tagged_nodes(BoundaryTag::Interface);
        assert!(!iface.is_empty());
        assert!(iface.iter().all(|&i| (m.nodes[i].norm() - 1.0).abs() <= 1e-10));
        let outer = m.boundary_nodes();
        assert!(outer.iter().all(|&i| (m.nodes[i].norm() - 2.0).abs() <= 1e-12));
    }

    #[test]
    fn halving_h_roughly_quadruples_triangles() {
        let a = generate_disk_mesh(&[1.0, 2.0], 0.1).unwrap().triangles.len() as f64;
        let b = generate_disk_mesh(&[1.0, 2.0], 0.05).unwrap().triangles.len() as f64;
        let r = b / a;
        assert!((r - 4.0).abs() <= 1.2, "ratio {r}");
    }

    #[test]
    fn coarse_h_is_rejected() {
        assert!(generate_disk_mesh(&[1.0, 1.05, 2.0], 0.1).is_err());
        assert!(generate_disk_mesh(&[2.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = generate_disk_mesh(&[1.0, 2.0], 0.3).unwrap();
        let text = m.to_text();
        let back = Mesh::from_text(&text).unwrap();
        assert_eq!(back.nodes, m.nodes);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.to_text(), text);
        assert!(Mesh::from_text(&text.replacen("meshfmt 1", "meshfmt 2", 1)).is_err());
    }
}
