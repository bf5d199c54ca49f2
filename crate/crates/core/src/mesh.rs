//! Shape-regular partitions of intervals and polygonal 2D domains.
//!
//! Nodes are numbered lexicographically by coordinate and interior degrees of
//! freedom inherit that order, which fixes the layout of every assembled
//! matrix.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, MeshLoadError, Result};

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementFamily {
    #[serde(rename = "P1_1D")]
    P1Interval,
    #[serde(rename = "P2_1D")]
    P2Interval,
    #[serde(rename = "P1_TRI")]
    P1Triangle,
}

impl ElementFamily {
    pub fn dim(self) -> usize {
        match self {
            Self::P1Interval | Self::P2Interval => 1,
            Self::P1Triangle => 2,
        }
    }

    /// Polynomial degree of the local shape functions.
    pub fn degree(self) -> usize {
        match self {
            Self::P2Interval => 2,
            _ => 1,
        }
    }

    pub fn nodes_per_element(self) -> usize {
        match self {
            Self::P1Interval => 2,
            Self::P2Interval | Self::P1Triangle => 3,
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    family: ElementFamily,
    coords: Vec<f64>,
    conn: Vec<usize>,
    boundary: Vec<bool>,
    midpoint: Vec<bool>,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
    locator: Locator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMetrics {
    /// Largest element diameter.
    pub h: f64,
    pub h_min: f64,
    /// Largest diameter-to-inradius ratio.
    pub gamma: f64,
    pub n_interior_dofs: usize,
}

/// Where a point landed: the element and its local coordinates there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub element: usize,
    /// Barycentric coordinates; only the first `dim + 1` are meaningful.
    pub bary: [f64; 3],
}

impl Mesh {
    /// Assembles a mesh from raw arrays and checks every invariant.
    ///
    /// `coords` is flat with stride `family.dim()`; `conn` is flat with stride
    /// `family.nodes_per_element()`. For `P2Interval` the third index of each
    /// element is its midpoint node.
    pub fn new(family: ElementFamily, coords: Vec<f64>, conn: Vec<usize>, boundary_nodes: &[usize]) -> Result<Self> {
        Self::build(family, coords, conn, boundary_nodes)
            .map_err(|(elem, kind)| invalid(format!("element {elem}: {kind}")))
    }

    fn build(
        family: ElementFamily,
        coords: Vec<f64>,
        conn: Vec<usize>,
        boundary_nodes: &[usize],
    ) -> std::result::Result<Self, (usize, MeshLoadError)> {
        let dim = family.dim();
        let npe = family.nodes_per_element();
        assert_eq!(coords.len() % dim, 0);
        assert_eq!(conn.len() % npe, 0);
        let n_nodes = coords.len() / dim;

        let mut midpoint = vec![false; n_nodes];
        for (e, nodes) in conn.chunks(npe).enumerate() {
            for (k, &a) in nodes.iter().enumerate() {
                if a >= n_nodes {
                    return Err((e, MeshLoadError::DanglingIndex { index: a, n_nodes }));
                }
                if nodes[..k].contains(&a) {
                    return Err((e, MeshLoadError::RepeatedIndex));
                }
            }
            let measure = element_measure(dim, &coords, nodes);
            if !(measure > 0.0) {
                return Err((e, MeshLoadError::DegenerateElement));
            }
            if family == ElementFamily::P2Interval {
                let (a, b, m) = (coords[nodes[0]], coords[nodes[1]], coords[nodes[2]]);
                if ((a + b) / 2.0 - m).abs() > GEOM_TOL * (1.0 + (b - a).abs()) {
                    return Err((
                        e,
                        MeshLoadError::Parse("P2 midpoint node is not at the element midpoint".into()),
                    ));
                }
                midpoint[nodes[2]] = true;
            }
        }

        let mut boundary = vec![false; n_nodes];
        for &b in boundary_nodes {
            if b >= n_nodes {
                return Err((0, MeshLoadError::DanglingIndex { index: b, n_nodes }));
            }
            boundary[b] = true;
        }

        let mut interior: Vec<usize> = (0..n_nodes).filter(|&i| !boundary[i]).collect();
        interior.sort_by(|&a, &b| lex_cmp(&coords[a * dim..(a + 1) * dim], &coords[b * dim..(b + 1) * dim]));
        let mut dof_of_node = vec![None; n_nodes];
        for (d, &n) in interior.iter().enumerate() {
            dof_of_node[n] = Some(d);
        }

        let locator = Locator::build(dim, &coords, &conn, npe);
        Ok(Self {
            dim,
            family,
            coords,
            conn,
            boundary,
            midpoint,
            dof_of_node,
            node_of_dof: interior,
            locator,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_elements(&self) -> usize {
        self.conn.len() / self.family.nodes_per_element()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.family.nodes_per_element();
        &self.conn[e * npe..(e + 1) * npe]
    }

    /// Vertex nodes of an element (drops the P2 midpoint).
    pub fn vertices(&self, e: usize) -> &[usize] {
        &self.element(e)[..self.dim + 1]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn is_midpoint(&self, node: usize) -> bool {
        self.midpoint[node]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.boundary[i]).collect()
    }

    /// Number of interior degrees of freedom `N_h`.
    pub fn n_dofs(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    /// Length or area of an element.
    pub fn measure(&self, e: usize) -> f64 {
        element_measure(self.dim, &self.coords, self.vertices(e))
    }

    pub fn diameter(&self, e: usize) -> f64 {
        let v = self.vertices(e);
        let mut d: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                d = d.max(dist(self.node(v[i]), self.node(v[j])));
            }
        }
        d
    }

    /// Inradius-type measure `ρ_E`: the length itself for intervals,
    /// `2·area / perimeter` for triangles.
    pub fn inradius(&self, e: usize) -> f64 {
        match self.dim {
            1 => self.measure(e),
            _ => {
                let v = self.vertices(e);
                let perimeter = dist(self.node(v[0]), self.node(v[1]))
                    + dist(self.node(v[1]), self.node(v[2]))
                    + dist(self.node(v[2]), self.node(v[0]));
                2.0 * self.measure(e) / perimeter
            }
        }
    }

    /// Finds an element containing `x` (closed elements, tolerance 1e-12).
    pub fn locate(&self, x: &[f64]) -> Option<Location> {
        self.locator.locate(self, x)
    }

    /// Barycentric coordinates of `x` with respect to element `e`.
    pub fn barycentric(&self, e: usize, x: &[f64]) -> [f64; 3] {
        let v = self.vertices(e);
        match self.dim {
            1 => {
                let (a, b) = (self.node(v[0])[0], self.node(v[1])[0]);
                let t = (x[0] - a) / (b - a);
                [1.0 - t, t, 0.0]
            }
            _ => {
                let (p0, p1, p2) = (self.node(v[0]), self.node(v[1]), self.node(v[2]));
                let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
                let l1 = ((x[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (x[1] - p0[1])) / det;
                let l2 = ((p1[0] - p0[0]) * (x[1] - p0[1]) - (x[0] - p0[0]) * (p1[1] - p0[1])) / det;
                [1.0 - l1 - l2, l1, l2]
            }
        }
    }

    pub fn metrics(&self) -> MeshMetrics {
        let mut h: f64 = 0.0;
        let mut h_min = f64::INFINITY;
        let mut gamma: f64 = 0.0;
        for e in 0..self.n_elements() {
            let d = self.diameter(e);
            h = h.max(d);
            h_min = h_min.min(d);
            gamma = gamma.max(d / self.inradius(e));
        }
        MeshMetrics {
            h,
            h_min,
            gamma,
            n_interior_dofs: self.n_dofs(),
        }
    }

    /// Serializes to the line-oriented text format read by [`load_mesh`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dim {}", self.dim).unwrap();
        for i in 0..self.n_nodes() {
            let p = self.node(i);
            match self.dim {
                1 => writeln!(s, "node {}", p[0]).unwrap(),
                _ => writeln!(s, "node {} {}", p[0], p[1]).unwrap(),
            }
        }
        for e in 0..self.n_elements() {
            let idx: Vec<String> = self.element(e).iter().map(|i| i.to_string()).collect();
            writeln!(s, "elem {}", idx.join(" ")).unwrap();
        }
        for b in self.boundary_nodes() {
            writeln!(s, "bnode {b}").unwrap();
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Signed length (1D) or signed area (2D, counter-clockwise positive).
fn element_measure(dim: usize, coords: &[f64], nodes: &[usize]) -> f64 {
    match dim {
        1 => coords[nodes[1]] - coords[nodes[0]],
        _ => {
            let p = |i: usize| (coords[2 * nodes[i]], coords[2 * nodes[i] + 1]);
            let (a, b, c) = (p(0), p(1), p(2));
            0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1))
        }
    }
}

/// Point-location acceleration: sorted intervals in 1D, a bucket grid in 2D.
#[derive(Debug, Clone, PartialEq)]
enum Locator {
    Sorted {
        starts: Vec<f64>,
        elems: Vec<usize>,
    },
    Grid {
        origin: [f64; 2],
        cell: [f64; 2],
        dims: [usize; 2],
        buckets: Vec<Vec<usize>>,
    },
}

impl Locator {
    fn build(dim: usize, coords: &[f64], conn: &[usize], npe: usize) -> Self {
        let n_elem = conn.len() / npe;
        if dim == 1 {
            let mut elems: Vec<usize> = (0..n_elem).collect();
            elems.sort_by(|&a, &b| coords[conn[a * npe]].total_cmp(&coords[conn[b * npe]]));
            let starts = elems.iter().map(|&e| coords[conn[e * npe]]).collect();
            return Self::Sorted { starts, elems };
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in coords.chunks(2) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let side = ((n_elem as f64).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut buckets = vec![Vec::new(); side * side];
        for e in 0..n_elem {
            let (mut bl, mut bh) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &n in &conn[e * npe..e * npe + 3] {
                for k in 0..2 {
                    bl[k] = bl[k].min(coords[2 * n + k]);
                    bh[k] = bh[k].max(coords[2 * n + k]);
                }
            }
            let clamp =
                |v: f64, k: usize| -> usize { (((v - lo[k]) / cell[k]).floor().max(0.0) as usize).min(dims[k] - 1) };
            for i in clamp(bl[0] - GEOM_TOL, 0)..=clamp(bh[0] + GEOM_TOL, 0) {
                for j in clamp(bl[1] - GEOM_TOL, 1)..=clamp(bh[1] + GEOM_TOL, 1) {
                    buckets[i * dims[1] + j].push(e);
                }
            }
        }
        Self::Grid {
            origin: lo,
            cell,
            dims,
            buckets,
        }
    }

    fn locate(&self, mesh: &Mesh, x: &[f64]) -> Option<Location> {
        if x.len() != mesh.dim || x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let inside = |e: usize| -> Option<Location> {
            let bary = mesh.barycentric(e, x);
            bary[..=mesh.dim]
                .iter()
                .all(|&l| l >= -GEOM_TOL)
                .then_some(Location { element: e, bary })
        };
        match self {
            Self::Sorted { starts, elems } => {
                let k = starts.partition_point(|&s| s <= x[0] + GEOM_TOL);
                // the point can sit on the shared node of two neighbours
                (k.saturating_sub(2)..k).rev().find_map(|i| inside(elems[i]))
            }
            Self::Grid {
                origin,
                cell,
                dims,
                buckets,
            } => {
                let mut idx = [0usize; 2];
                for k in 0..2 {
                    let t = (x[k] - origin[k]) / cell[k];
                    if t < -GEOM_TOL || t > dims[k] as f64 + GEOM_TOL {
                        return None;
                    }
                    idx[k] = (t.floor().max(0.0) as usize).min(dims[k] - 1);
                }
                buckets[idx[0] * dims[1] + idx[1]].iter().find_map(|&e| inside(e))
            }
        }
    }
}

/// Uniform partition of `[a, b]` into `n_elem` intervals.
pub fn build_uniform_interval(a: f64, b: f64, n_elem: usize, family: ElementFamily) -> Result<Mesh> {
    if n_elem == 0 {
        return Err(invalid("n_elem must be positive"));
    }
    if !(a < b) {
        return Err(invalid(format!("need a < b, got [{a}, {b}]")));
    }
    let h = (b - a) / n_elem as f64;
    let (coords, conn) = match family {
        ElementFamily::P1Interval => {
            let coords: Vec<f64> = (0..=n_elem).map(|i| vertex(a, b, h, i, n_elem)).collect();
            let conn = (0..n_elem).flat_map(|e| [e, e + 1]).collect();
            (coords, conn)
        }
        ElementFamily::P2Interval => {
            // node 2e is a vertex, node 2e + 1 the midpoint of element e
            let coords: Vec<f64> = (0..=2 * n_elem)
                .map(|k| {
                    if k % 2 == 0 {
                        vertex(a, b, h, k / 2, n_elem)
                    } else {
                        let (l, r) = (vertex(a, b, h, k / 2, n_elem), vertex(a, b, h, k / 2 + 1, n_elem));
                        0.5 * (l + r)
                    }
                })
                .collect();
            let conn = (0..n_elem).flat_map(|e| [2 * e, 2 * e + 2, 2 * e + 1]).collect();
            (coords, conn)
        }
        ElementFamily::P1Triangle => return Err(invalid("interval meshes take a 1D family")),
    };
    let last = coords.len() - 1;
    Mesh::new(family, coords, conn, &[0, last])
}

fn vertex(a: f64, b: f64, h: f64, i: usize, n: usize) -> f64 {
    if i == n {
        b
    } else {
        a + h * i as f64
    }
}

/// Unit square split into `nx × ny` cells, each cut into two triangles along
/// its rising diagonal, with an optional grid-aligned rectangular hole.
pub fn build_structured_square(nx: usize, ny: usize, hole: Option<Rect>) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(invalid("nx and ny must be positive"));
    }
    let hole_cells = match hole {
        None => None,
        Some(r) => {
            let snap = |v: f64, n: usize| -> Result<usize> {
                let t = v * n as f64;
                let k = t.round();
                if (t - k).abs() > 1e-9 {
                    return Err(invalid(format!("hole edge {v} is not on the {n}-cell grid")));
                }
                Ok(k as usize)
            };
            if !(r.x0 > 0.0 && r.x1 < 1.0 && r.y0 > 0.0 && r.y1 < 1.0 && r.x0 < r.x1 && r.y0 < r.y1) {
                return Err(invalid("hole must lie strictly inside the unit square"));
            }
            Some((snap(r.x0, nx)?, snap(r.x1, nx)?, snap(r.y0, ny)?, snap(r.y1, ny)?))
        }
    };
    let in_hole_cell = |i: usize, j: usize| match hole_cells {
        Some((i0, i1, j0, j1)) => i >= i0 && i < i1 && j >= j0 && j < j1,
        None => false,
    };
    let on_hole_edge = |i: usize, j: usize| match hole_cells {
        Some((i0, i1, j0, j1)) => i >= i0 && i <= i1 && j >= j0 && j <= j1,
        None => false,
    };

    // grid node (i, j) -> provisional id i*(ny+1)+j, which is already
    // lexicographic in (x, y)
    let gid = |i: usize, j: usize| i * (ny + 1) + j;
    let mut tris: Vec<[usize; 3]> = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            if in_hole_cell(i, j) {
                continue;
            }
            let (p00, p10, p01, p11) = (gid(i, j), gid(i + 1, j), gid(i, j + 1), gid(i + 1, j + 1));
            tris.push([p00, p10, p11]);
            tris.push([p00, p11, p01]);
        }
    }
    let n_grid = (nx + 1) * (ny + 1);
    let mut used = vec![false; n_grid];
    for t in &tris {
        for &n in t {
            used[n] = true;
        }
    }
    let mut new_id = vec![usize::MAX; n_grid];
    let mut coords = Vec::new();
    let mut boundary = Vec::new();
    let mut next = 0;
    for i in 0..=nx {
        for j in 0..=ny {
            let g = gid(i, j);
            if !used[g] {
                continue;
            }
            new_id[g] = next;
            coords.push(if i == nx { 1.0 } else { i as f64 / nx as f64 });
            coords.push(if j == ny { 1.0 } else { j as f64 / ny as f64 });
            if i == 0 || i == nx || j == 0 || j == ny || on_hole_edge(i, j) {
                boundary.push(next);
            }
            next += 1;
        }
    }
    let conn = tris.iter().flat_map(|t| t.map(|n| new_id[n])).collect();
    Mesh::new(ElementFamily::P1Triangle, coords, conn, &boundary)
}

/// Reads the text mesh format:
///
/// ```text
/// dim 2
/// node 0 0
/// node 1 0
/// node 0 1
/// elem 0 1 2
/// bnode 0
/// ```
///
/// `#` starts a comment. In 1D, three indices on an `elem` line describe a
/// quadratic element whose third node is the midpoint.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text).map_err(|(line, kind)| Error::MeshLoad {
        path: path.to_path_buf(),
        line,
        kind,
    })
}

/// Parses mesh text; errors carry a 1-based line number.
pub fn parse_mesh(text: &str) -> std::result::Result<Mesh, (usize, MeshLoadError)> {
    let mut dim: Option<usize> = None;
    let mut coords = Vec::new();
    let mut conn = Vec::new();
    let mut elem_lines = Vec::new();
    let mut npe: Option<usize> = None;
    let mut bnodes = Vec::new();
    let mut bnode_lines = Vec::new();
    let mut last_line = 0;

    let parse_err = |line: usize, msg: String| (line, MeshLoadError::Parse(msg));
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        last_line = line_no;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        let Some(key) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        match key {
            "dim" => {
                let d: usize = rest
                    .first()
                    .and_then(|t| t.parse().ok())
                    .filter(|d| *d == 1 || *d == 2)
                    .ok_or_else(|| parse_err(line_no, "dim must be 1 or 2".into()))?;
                if rest.len() != 1 || dim.is_some() {
                    return Err(parse_err(line_no, "malformed or repeated dim line".into()));
                }
                dim = Some(d);
            }
            "node" => {
                let d = dim.ok_or_else(|| parse_err(line_no, "node before dim".into()))?;
                if rest.len() != d {
                    return Err(parse_err(line_no, format!("node needs {d} coordinates")));
                }
                for t in rest {
                    let v: f64 = t
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad coordinate '{t}'")))?;
                    if !v.is_finite() {
                        return Err(parse_err(line_no, "non-finite coordinate".into()));
                    }
                    coords.push(v);
                }
            }
            "elem" => {
                let d = dim.ok_or_else(|| parse_err(line_no, "elem before dim".into()))?;
                let allowed = if d == 1 { [2, 3] } else { [3, 3] };
                if !allowed.contains(&rest.len()) {
                    return Err(parse_err(line_no, format!("elem has {} indices", rest.len())));
                }
                if *npe.get_or_insert(rest.len()) != rest.len() {
                    return Err(parse_err(line_no, "mixed element types".into()));
                }
                for t in rest {
                    conn.push(
                        t.parse::<usize>()
                            .map_err(|_| parse_err(line_no, format!("bad index '{t}'")))?,
                    );
                }
                elem_lines.push(line_no);
            }
            "bnode" => {
                if rest.len() != 1 {
                    return Err(parse_err(line_no, "bnode takes one index".into()));
                }
                bnodes.push(
                    rest[0]
                        .parse::<usize>()
                        .map_err(|_| parse_err(line_no, format!("bad index '{}'", rest[0])))?,
                );
                bnode_lines.push(line_no);
            }
            other => return Err(parse_err(line_no, format!("unknown keyword '{other}'"))),
        }
    }
    let dim = dim.ok_or_else(|| parse_err(last_line.max(1), "missing dim line".into()))?;
    let npe = npe.ok_or_else(|| parse_err(last_line.max(1), "mesh has no elements".into()))?;
    let family = match (dim, npe) {
        (1, 2) => ElementFamily::P1Interval,
        (1, 3) => ElementFamily::P2Interval,
        _ => ElementFamily::P1Triangle,
    };
    let n_nodes = coords.len() / dim;
    if let Some(pos) = bnodes.iter().position(|&b| b >= n_nodes) {
        return Err((
            bnode_lines[pos],
            MeshLoadError::DanglingIndex {
                index: bnodes[pos],
                n_nodes,
            },
        ));
    }
    Mesh::build(family, coords, conn, &bnodes).map_err(|(e, kind)| (elem_lines[e], kind))
}
