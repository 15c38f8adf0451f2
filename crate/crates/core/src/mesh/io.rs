//! Triangle/TetGen-style text mesh files.
//!
//! ```text
//! prefix.node   "N d 0 0"      then N lines "idx x_1 .. x_d"
//! prefix.ele    "K d+1 0"      then K lines "idx v_1 .. v_{d+1}"
//! prefix.face   "T d 1"        then T lines "idx v_1 .. v_d tag"   (1 = Dirichlet, 2 = Neumann)
//! ```
//!
//! Indices are 1-based on disk and 0-based in memory. Blank lines and lines
//! starting with `#` are skipped. Coordinates are written with 17
//! significant digits so a write/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BoundaryTag, Mesh};
use crate::error::{Error, Result};

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines { path, inner: text.lines().enumerate() }
    }

    /// Next non-empty, non-comment line as (1-based line number, tokens).
    fn next_record(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Some((i + 1, line.split_whitespace().collect()));
            }
        }
        None
    }

    fn expect_record(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        self.next_record()
            .ok_or_else(|| Error::parse(self.path, 0, format!("unexpected end of file, expected {what}")))
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, tok: &str, what: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| Error::parse(self.path, line, format!("cannot parse {what} from {tok:?}")))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::Io)
}

/// Converts a 1-based file index into a 0-based one, checking the range.
fn vertex(lines: &Lines, line: usize, tok: &str, n_nodes: usize) -> Result<usize> {
    let v: usize = lines.parse(line, tok, "vertex index")?;
    if v == 0 || v > n_nodes {
        return Err(Error::parse(
            lines.path,
            line,
            Error::IndexOutOfRange { what: "node", index: v, len: n_nodes + 1 }.to_string(),
        ));
    }
    Ok(v - 1)
}

/// Loads and validates a mesh from its three text files.
pub fn load_mesh(node_path: &Path, ele_path: &Path, face_path: &Path) -> Result<Mesh> {
    let node_text = read(node_path)?;
    let mut lines = Lines::new(node_path, &node_text);
    let (hl, header) = lines.expect_record("node header")?;
    if header.len() < 2 {
        return Err(Error::parse(node_path, hl, "node header must be \"N d 0 0\""));
    }
    let n_nodes: usize = lines.parse(hl, header[0], "node count")?;
    let dim: usize = lines.parse(hl, header[1], "dimension")?;
    if dim != 2 && dim != 3 {
        return Err(Error::parse(node_path, hl, format!("dimension must be 2 or 3, got {dim}")));
    }
    let mut nodes = Vec::with_capacity(n_nodes * dim);
    for _ in 0..n_nodes {
        let (ln, toks) = lines.expect_record("node line")?;
        if toks.len() < dim + 1 {
            return Err(Error::parse(node_path, ln, format!("expected index and {dim} coordinates")));
        }
        for tok in &toks[1..=dim] {
            nodes.push(lines.parse::<f64>(ln, tok, "coordinate")?);
        }
    }

    let ele_text = read(ele_path)?;
    let mut lines = Lines::new(ele_path, &ele_text);
    let (hl, header) = lines.expect_record("element header")?;
    let n_elements: usize = lines.parse(hl, header[0], "element count")?;
    if let Some(tok) = header.get(1) {
        let per: usize = lines.parse(hl, tok, "vertices per element")?;
        if per != dim + 1 {
            return Err(Error::parse(ele_path, hl, format!("expected {} vertices per element, got {per}", dim + 1)));
        }
    }
    let mut elements = Vec::with_capacity(n_elements * (dim + 1));
    for _ in 0..n_elements {
        let (ln, toks) = lines.expect_record("element line")?;
        if toks.len() < dim + 2 {
            return Err(Error::parse(ele_path, ln, format!("expected index and {} vertices", dim + 1)));
        }
        for tok in &toks[1..=dim + 1] {
            elements.push(vertex(&lines, ln, tok, n_nodes)?);
        }
    }

    let face_text = read(face_path)?;
    let mut lines = Lines::new(face_path, &face_text);
    let (hl, header) = lines.expect_record("facet header")?;
    let n_facets: usize = lines.parse(hl, header[0], "facet count")?;
    let mut facets = Vec::with_capacity(n_facets * dim);
    let mut tags = Vec::with_capacity(n_facets);
    for _ in 0..n_facets {
        let (ln, toks) = lines.expect_record("facet line")?;
        if toks.len() < dim + 2 {
            return Err(Error::parse(face_path, ln, format!("expected index, {dim} vertices and a tag")));
        }
        for tok in &toks[1..=dim] {
            facets.push(vertex(&lines, ln, tok, n_nodes)?);
        }
        let code: u32 = lines.parse(ln, toks[dim + 1], "boundary tag")?;
        let tag = BoundaryTag::from_code(code)
            .ok_or_else(|| Error::parse(face_path, ln, format!("unknown boundary tag {code} (1 = Dirichlet, 2 = Neumann)")))?;
        tags.push(tag);
    }

    Mesh::new(dim, nodes, elements, facets, tags)
}

/// The three file paths for a mesh prefix.
pub fn mesh_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".node"), with(".ele"), with(".face"))
}

pub fn load_mesh_prefix(prefix: &Path) -> Result<Mesh> {
    let (n, e, f) = mesh_paths(prefix);
    load_mesh(&n, &e, &f)
}

pub fn node_file(mesh: &Mesh) -> String {
    let d = mesh.dim();
    let mut s = format!("{} {} 0 0\n", mesh.n_nodes(), d);
    for i in 0..mesh.n_nodes() {
        let _ = write!(s, "{}", i + 1);
        for x in mesh.node(i) {
            let _ = write!(s, " {x:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn ele_file(mesh: &Mesh) -> String {
    let d = mesh.dim();
    let mut s = format!("{} {} 0\n", mesh.n_elements(), d + 1);
    for l in 0..mesh.n_elements() {
        let _ = write!(s, "{}", l + 1);
        for v in mesh.element(l) {
            let _ = write!(s, " {}", v + 1);
        }
        s.push('\n');
    }
    s
}

pub fn face_file(mesh: &Mesh) -> String {
    let d = mesh.dim();
    let mut s = format!("{} {} 1\n", mesh.n_facets(), d);
    for t in 0..mesh.n_facets() {
        let _ = write!(s, "{}", t + 1);
        for v in mesh.facet(t) {
            let _ = write!(s, " {}", v + 1);
        }
        let _ = writeln!(s, " {}", mesh.facet_tag(t).code());
    }
    s
}

/// Writes `prefix.node`, `prefix.ele` and `prefix.face`; returns the paths.
pub fn write_mesh(mesh: &Mesh, prefix: &Path) -> Result<[PathBuf; 3]> {
    let (n, e, f) = mesh_paths(prefix);
    fs::write(&n, node_file(mesh))?;
    fs::write(&e, ele_file(mesh))?;
    fs::write(&f, face_file(mesh))?;
    Ok([n, e, f])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured, BcLayout};

    fn write_files(dir: &Path, node: &str, ele: &str, face: &str) -> (PathBuf, PathBuf, PathBuf) {
        let paths = mesh_paths(&dir.join("m"));
        fs::write(&paths.0, node).unwrap();
        fs::write(&paths.1, ele).unwrap();
        fs::write(&paths.2, face).unwrap();
        paths
    }

    #[test]
    fn two_triangle_square_matches_generator() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e, f) = write_files(
            dir.path(),
            "4 2 0 0\n1 0 0\n2 1 0\n3 0 1\n4 1 1\n",
            "2 3 0\n1 1 2 4\n2 1 4 3\n",
            "4 2 1\n1 1 2 1\n2 2 4 1\n3 4 3 1\n4 3 1 1\n",
        );
        let loaded = load_mesh(&n, &e, &f).unwrap();
        let generated = generate_structured(2, 1, BcLayout::AllDirichlet).unwrap();
        assert_eq!(loaded.n_elements(), generated.n_elements());
        assert_eq!(loaded.n_nodes(), generated.n_nodes());
        assert_eq!(loaded.element_volumes().unwrap(), generated.element_volumes().unwrap());
        // same point set up to ordering
        let mut a: Vec<_> = (0..4).map(|i| loaded.node(i).to_vec()).collect();
        let mut b: Vec<_> = (0..4).map(|i| generated.node(i).to_vec()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_vertex() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e, f) = write_files(
            dir.path(),
            "3 2 0 0\n1 0 0\n2 1 0\n3 0 1\n",
            "1 3 0\n1 1 2 4\n",
            "3 2 1\n1 1 2 1\n2 2 3 1\n3 3 1 1\n",
        );
        let err = load_mesh(&n, &e, &f).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clockwise_element_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e, f) = write_files(
            dir.path(),
            "3 2 0 0\n1 0 0\n2 2 0\n3 0 1\n",
            "1 3 0\n1 1 3 2\n",
            "3 2 1\n1 1 2 2\n2 2 3 2\n3 3 1 2\n",
        );
        let mesh = load_mesh(&n, &e, &f).unwrap();
        // signed area of (0,0),(2,0),(0,1) after normalization
        assert_eq!(mesh.signed_volume(0), 1.0);
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e, f) = write_files(
            dir.path(),
            "# comment\n3 2 0 0\n1 0 0\n2 1 zero\n3 0 1\n",
            "1 3 0\n1 1 2 3\n",
            "3 2 1\n1 1 2 1\n2 2 3 1\n3 3 1 1\n",
        );
        match load_mesh(&n, &e, &f).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut mesh = generate_structured(3, 3, BcLayout::Mixed).unwrap();
        // irrational-ish coordinates exercise the 17-digit formatting
        let nodes: Vec<f64> = mesh.coordinates().iter().map(|x| x * std::f64::consts::PI / 3.0).collect();
        mesh = Mesh::new(3, nodes, mesh.connectivity().to_vec(), mesh.facets.clone(), mesh.tags.clone()).unwrap();
        let prefix = dir.path().join("cube");
        write_mesh(&mesh, &prefix).unwrap();
        let loaded = load_mesh_prefix(&prefix).unwrap();
        assert_eq!(loaded, mesh);
    }
}
