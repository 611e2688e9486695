//! 2D meshes: structured quad grids, hierarchical refinement, periodic node
//! pairing and nested coarse-to-fine embeddings.
//!
//! Meshes are immutable after construction and safe to share across threads.
//! Structured grids keep their grid descriptor around so that refinement,
//! nesting and point location stay exact (no geometric searches).

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Element topology. Bilinear quadrilaterals and linear triangles only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Q1,
    T3,
}

impl ElementKind {
    pub fn node_count(self) -> usize {
        match self {
            ElementKind::Q1 => 4,
            ElementKind::T3 => 3,
        }
    }

    pub fn edge_count(self) -> usize {
        match self {
            ElementKind::Q1 => 4,
            ElementKind::T3 => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub kind: ElementKind,
    pub conn: Vec<usize>,
    pub phase: u8,
}

impl Element {
    /// Node index pair of a local edge, counter-clockwise.
    pub fn edge_nodes(&self, local_edge: usize) -> (usize, usize) {
        let n = self.conn.len();
        (self.conn[local_edge], self.conn[(local_edge + 1) % n])
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryEdge {
    pub element: usize,
    pub local_edge: u8,
    pub tag: String,
}

/// Descriptor of an axis-aligned structured quad grid; node (i, j) sits at
/// `origin + (i·Lx/nx, j·Ly/ny)` with row-major numbering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 2],
    pub lengths: [f64; 2],
}

impl GridInfo {
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn element_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node_coord(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64) * self.lengths[0] / (self.nx as f64),
            self.origin[1] + (j as f64) * self.lengths[1] / (self.ny as f64),
        ]
    }

    /// Element containing `x` together with its reference coordinates.
    /// Points on inter-element lines are assigned to the lower-index element.
    pub fn locate(&self, x: [f64; 2]) -> (usize, [f64; 2]) {
        let hx = self.lengths[0] / self.nx as f64;
        let hy = self.lengths[1] / self.ny as f64;
        let fi = ((x[0] - self.origin[0]) / hx).floor();
        let fj = ((x[1] - self.origin[1]) / hy).floor();
        let ei = (fi.max(0.0) as usize).min(self.nx - 1);
        let ej = (fj.max(0.0) as usize).min(self.ny - 1);
        let x0 = self.origin[0] + ei as f64 * hx;
        let y0 = self.origin[1] + ej as f64 * hy;
        let xi = 2.0 * (x[0] - x0) / hx - 1.0;
        let eta = 2.0 * (x[1] - y0) / hy - 1.0;
        (self.element_index(ei, ej), [xi, eta])
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    /// External node ids; identity for generated meshes, preserved on import.
    pub node_ids: Vec<usize>,
    pub elements: Vec<Element>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub grid: Option<GridInfo>,
    pub parent: Option<Box<Mesh>>,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn dof_count(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Signed area (positive for counter-clockwise connectivity).
    pub fn element_area(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        let mut a = 0.0;
        let n = el.conn.len();
        for k in 0..n {
            let p = self.nodes[el.conn[k]];
            let q = self.nodes[el.conn[(k + 1) % n]];
            a += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * a
    }

    pub fn element_coords(&self, e: usize) -> Vec<[f64; 2]> {
        self.elements[e].conn.iter().map(|&n| self.nodes[n]).collect()
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Nodes lying on edges carrying `tag`, deduplicated, in first-seen order.
    pub fn nodes_on_tag(&self, tag: &str) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for be in &self.boundary_edges {
            if be.tag == tag {
                let (a, b) = self.elements[be.element].edge_nodes(be.local_edge as usize);
                for n in [a, b] {
                    if !seen[n] {
                        seen[n] = true;
                        out.push(n);
                    }
                }
            }
        }
        out
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.boundary_edges.iter().any(|be| be.tag == tag)
    }
}

/// Structured grid of `nx` by `ny` bilinear quads with row-major numbering
/// and boundary edges tagged `left`/`right`/`bottom`/`top`.
pub fn build_structured_quads(
    nx: usize,
    ny: usize,
    origin: [f64; 2],
    lengths: [f64; 2],
) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Mesh("element counts must be at least 1".into()));
    }
    if !(lengths[0] > 0.0 && lengths[1] > 0.0) {
        return Err(Error::Mesh("edge lengths must be positive".into()));
    }
    let grid = GridInfo { nx, ny, origin, lengths };
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(grid.node_coord(i, j));
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(Element {
                kind: ElementKind::Q1,
                conn: vec![
                    grid.node_index(i, j),
                    grid.node_index(i + 1, j),
                    grid.node_index(i + 1, j + 1),
                    grid.node_index(i, j + 1),
                ],
                phase: 0,
            });
        }
    }
    let mut boundary_edges = Vec::new();
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            element: grid.element_index(i, 0),
            local_edge: 0,
            tag: "bottom".into(),
        });
        boundary_edges.push(BoundaryEdge {
            element: grid.element_index(i, ny - 1),
            local_edge: 2,
            tag: "top".into(),
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            element: grid.element_index(nx - 1, j),
            local_edge: 1,
            tag: "right".into(),
        });
        boundary_edges.push(BoundaryEdge {
            element: grid.element_index(0, j),
            local_edge: 3,
            tag: "left".into(),
        });
    }
    let node_ids = (0..nodes.len()).collect();
    Ok(Mesh { nodes, node_ids, elements, boundary_edges, grid: Some(grid), parent: None })
}

/// Split every quad into four congruent children, `levels` times. Parent node
/// coordinates reappear bit-exactly among the children (the row-major formula
/// `i·L/n` is invariant under doubling both `i` and `n`).
pub fn refine_hierarchical(mesh: &Mesh, levels: u32) -> Result<Mesh> {
    let grid = mesh
        .grid
        .ok_or_else(|| Error::Mesh("hierarchical refinement requires a structured grid".into()))?;
    if mesh.elements.iter().any(|e| e.kind != ElementKind::Q1) {
        return Err(Error::Mesh("hierarchical refinement supports Q1 grids only".into()));
    }
    let f = 1usize << levels;
    let mut fine = build_structured_quads(grid.nx * f, grid.ny * f, grid.origin, grid.lengths)?;
    fine.parent = Some(Box::new(mesh.clone()));
    Ok(fine)
}

/// Coarse-to-fine embedding between two nested structured grids.
#[derive(Debug, Clone)]
pub struct NestedMap {
    /// Fine node coinciding with each coarse node.
    pub coarse_to_fine: Vec<usize>,
    /// For each fine node: containing coarse element and reference coordinates.
    pub fine_to_coarse: Vec<(usize, [f64; 2])>,
    pub ratio: usize,
}

pub fn build_nested_map(coarse: &Mesh, fine: &Mesh) -> Result<NestedMap> {
    let cg = coarse
        .grid
        .ok_or_else(|| Error::Mesh("nested map requires structured grids".into()))?;
    let fg = fine
        .grid
        .ok_or_else(|| Error::Mesh("nested map requires structured grids".into()))?;
    if cg.origin != fg.origin || cg.lengths != fg.lengths {
        return Err(Error::Mesh("meshes cover different domains; not nested".into()));
    }
    if fg.nx % cg.nx != 0 || fg.ny % cg.ny != 0 || fg.nx / cg.nx != fg.ny / cg.ny {
        return Err(Error::Mesh(format!(
            "grids {}x{} and {}x{} are not nested",
            cg.nx, cg.ny, fg.nx, fg.ny
        )));
    }
    let r = fg.nx / cg.nx;
    let mut coarse_to_fine = Vec::with_capacity(coarse.node_count());
    for j in 0..=cg.ny {
        for i in 0..=cg.nx {
            coarse_to_fine.push(fg.node_index(i * r, j * r));
        }
    }
    let mut fine_to_coarse = Vec::with_capacity(fine.node_count());
    for j in 0..=fg.ny {
        for i in 0..=fg.nx {
            let ei = (i / r).min(cg.nx - 1);
            let ej = (j / r).min(cg.ny - 1);
            let xi = 2.0 * (i - ei * r) as f64 / r as f64 - 1.0;
            let eta = 2.0 * (j - ej * r) as f64 / r as f64 - 1.0;
            fine_to_coarse.push((cg.element_index(ei, ej), [xi, eta]));
        }
    }
    Ok(NestedMap { coarse_to_fine, fine_to_coarse, ratio: r })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairDirection {
    LeftRight,
    BottomTop,
    Diagonal,
}

/// Non-redundant periodic coupling of a square cell boundary: interior edge
/// pairs plus one corner group (three slaves tied to the bottom-left master).
#[derive(Debug, Clone)]
pub struct PeriodicPairing {
    /// Interior-edge pairs (slave, master, direction).
    pub pairs: Vec<(usize, usize, PairDirection)>,
    pub corner_master: usize,
    pub corner_slaves: [usize; 3],
}

impl PeriodicPairing {
    /// Number of non-redundant constraints L (pairs plus three corner ties).
    pub fn constraint_count(&self) -> usize {
        self.pairs.len() + 3
    }

    /// All (slave, master, direction) constraints, corner group last.
    pub fn constraints(&self) -> impl Iterator<Item = (usize, usize, PairDirection)> + '_ {
        let corners = [
            (self.corner_slaves[0], self.corner_master, PairDirection::LeftRight),
            (self.corner_slaves[1], self.corner_master, PairDirection::BottomTop),
            (self.corner_slaves[2], self.corner_master, PairDirection::Diagonal),
        ];
        self.pairs.iter().copied().chain(corners)
    }
}

/// Match boundary nodes of a `delta` by `delta` cell into periodic pairs.
/// Opposite boundaries must be congruent translates within `1e-10·delta`.
pub fn build_periodic_pairing(mesh: &Mesh, delta: f64) -> Result<PeriodicPairing> {
    let tol = 1e-10 * delta;
    let (lo, hi) = mesh.bounding_box();
    if (hi[0] - lo[0] - delta).abs() > tol || (hi[1] - lo[1] - delta).abs() > tol {
        return Err(Error::Mesh(format!(
            "cell is {:.6e} x {:.6e}, expected {:.6e} square",
            hi[0] - lo[0],
            hi[1] - lo[1],
            delta
        )));
    }
    let on = |v: f64, bound: f64| (v - bound).abs() <= tol;
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    let mut corner = [usize::MAX; 4]; // BL BR TL TR
    for (n, p) in mesh.nodes.iter().enumerate() {
        let l = on(p[0], lo[0]);
        let r = on(p[0], hi[0]);
        let b = on(p[1], lo[1]);
        let t = on(p[1], hi[1]);
        match (l, r, b, t) {
            (true, _, true, _) => corner[0] = n,
            (_, true, true, _) => corner[1] = n,
            (true, _, _, true) => corner[2] = n,
            (_, true, _, true) => corner[3] = n,
            (true, _, false, false) => left.push(n),
            (_, true, false, false) => right.push(n),
            (false, false, true, _) => bottom.push(n),
            (false, false, _, true) => top.push(n),
            _ => {}
        }
    }
    if corner.contains(&usize::MAX) {
        return Err(Error::Mesh("cell is missing one of its four corner nodes".into()));
    }
    let sort_by = |v: &mut Vec<usize>, axis: usize| {
        v.sort_by(|&a, &b| mesh.nodes[a][axis].total_cmp(&mesh.nodes[b][axis]));
    };
    sort_by(&mut left, 1);
    sort_by(&mut right, 1);
    sort_by(&mut bottom, 0);
    sort_by(&mut top, 0);

    let match_sides = |slaves: &[usize], masters: &[usize], axis: usize, dir: PairDirection| {
        if slaves.len() != masters.len() {
            let n = slaves.first().or(masters.first()).copied().unwrap_or(0);
            return Err(Error::Mesh(format!(
                "opposite boundaries hold {} vs {} interior nodes; first unmatched node {}",
                slaves.len(),
                masters.len(),
                mesh.node_ids[n]
            )));
        }
        let mut out = Vec::with_capacity(slaves.len());
        for (&s, &m) in slaves.iter().zip(masters) {
            if (mesh.nodes[s][axis] - mesh.nodes[m][axis]).abs() > tol {
                return Err(Error::Mesh(format!(
                    "boundary node {} has no periodic partner within tolerance",
                    mesh.node_ids[s]
                )));
            }
            out.push((s, m, dir));
        }
        Ok(out)
    };
    let mut pairs = match_sides(&right, &left, 1, PairDirection::LeftRight)?;
    pairs.extend(match_sides(&top, &bottom, 0, PairDirection::BottomTop)?);
    Ok(PeriodicPairing {
        pairs,
        corner_master: corner[0],
        corner_slaves: [corner[1], corner[2], corner[3]],
    })
}

/// Parse the line-oriented mesh text format:
/// `NODE <id> <x> <y>`, `ELEM <id> <Q1|T3> <n1> .. <nk> <phase>`,
/// `EDGE <elem> <local-edge> <tag>`, `#` comments.
pub fn import_two_phase_mesh(text: &str) -> Result<Mesh> {
    let mut nodes: Vec<[f64; 2]> = Vec::new();
    let mut node_ids: Vec<usize> = Vec::new();
    let mut id_to_index: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    struct RawElem {
        kind: ElementKind,
        conn_ids: Vec<usize>,
        phase: u8,
        line: usize,
    }
    let mut raw_elems: Vec<RawElem> = Vec::new();
    let mut raw_edges: Vec<(usize, u8, String, usize)> = Vec::new();

    let parse_err = |line: usize, msg: &str| Error::MeshParse { line, msg: msg.into() };
    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        match fields[0] {
            "NODE" => {
                if fields.len() != 4 {
                    return Err(parse_err(line_num, "NODE expects: NODE <id> <x> <y>"));
                }
                let id: usize =
                    fields[1].parse().map_err(|_| parse_err(line_num, "bad node id"))?;
                let x: f64 = fields[2].parse().map_err(|_| parse_err(line_num, "bad x"))?;
                let y: f64 = fields[3].parse().map_err(|_| parse_err(line_num, "bad y"))?;
                if id_to_index.insert(id, nodes.len()).is_some() {
                    return Err(parse_err(line_num, &format!("duplicate node id {id}")));
                }
                node_ids.push(id);
                nodes.push([x, y]);
            }
            "ELEM" => {
                if fields.len() < 4 {
                    return Err(parse_err(line_num, "ELEM expects: ELEM <id> <kind> <conn..> <phase>"));
                }
                let kind = match fields[2] {
                    "Q1" => ElementKind::Q1,
                    "T3" => ElementKind::T3,
                    other => return Err(parse_err(line_num, &format!("unknown element kind {other}"))),
                };
                let want = kind.node_count();
                if fields.len() != 3 + want + 1 {
                    return Err(parse_err(
                        line_num,
                        &format!("{:?} element expects {} connectivity entries and a phase", kind, want),
                    ));
                }
                let mut conn_ids = Vec::with_capacity(want);
                for f in &fields[3..3 + want] {
                    conn_ids.push(f.parse().map_err(|_| parse_err(line_num, "bad connectivity id"))?);
                }
                let phase: u8 = fields[3 + want]
                    .parse()
                    .map_err(|_| parse_err(line_num, "bad phase id"))?;
                raw_elems.push(RawElem { kind, conn_ids, phase, line: line_num });
            }
            "EDGE" => {
                if fields.len() != 4 {
                    return Err(parse_err(line_num, "EDGE expects: EDGE <elem> <local-edge> <tag>"));
                }
                let elem: usize =
                    fields[1].parse().map_err(|_| parse_err(line_num, "bad element index"))?;
                let local: u8 =
                    fields[2].parse().map_err(|_| parse_err(line_num, "bad local edge"))?;
                raw_edges.push((elem, local, fields[3].to_string(), line_num));
            }
            other => return Err(parse_err(line_num, &format!("unknown record {other}"))),
        }
    }

    let mut elements = Vec::with_capacity(raw_elems.len());
    for re in &raw_elems {
        let mut conn = Vec::with_capacity(re.conn_ids.len());
        for id in &re.conn_ids {
            let &idx = id_to_index.get(id).ok_or_else(|| Error::MeshParse {
                line: re.line,
                msg: format!("element references unknown node {id}"),
            })?;
            conn.push(idx);
        }
        elements.push(Element { kind: re.kind, conn, phase: re.phase });
    }
    let mut boundary_edges = Vec::with_capacity(raw_edges.len());
    for (elem, local, tag, line) in raw_edges {
        if elem >= elements.len() || usize::from(local) >= elements[elem].kind.edge_count() {
            return Err(Error::MeshParse { line, msg: "EDGE references unknown element or edge".into() });
        }
        boundary_edges.push(BoundaryEdge { element: elem, local_edge: local, tag });
    }
    let mesh = Mesh { nodes, node_ids, elements, boundary_edges, grid: None, parent: None };
    for e in 0..mesh.element_count() {
        if mesh.element_area(e) <= 0.0 {
            return Err(Error::Mesh(format!(
                "element {e} has non-positive area {:.3e}",
                mesh.element_area(e)
            )));
        }
    }
    Ok(mesh)
}

/// Inverse of [`import_two_phase_mesh`]: full-precision text emission.
pub fn export_mesh_text(mesh: &Mesh) -> String {
    let mut s = String::new();
    for (idx, p) in mesh.nodes.iter().enumerate() {
        writeln!(s, "NODE {} {:.17e} {:.17e}", mesh.node_ids[idx], p[0], p[1]).unwrap();
    }
    for (e, el) in mesh.elements.iter().enumerate() {
        let kind = match el.kind {
            ElementKind::Q1 => "Q1",
            ElementKind::T3 => "T3",
        };
        let conn: Vec<String> =
            el.conn.iter().map(|&n| mesh.node_ids[n].to_string()).collect();
        writeln!(s, "ELEM {} {} {} {}", e, kind, conn.join(" "), el.phase).unwrap();
    }
    for be in &mesh.boundary_edges {
        writeln!(s, "EDGE {} {} {}", be.element, be.local_edge, be.tag).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_counts() {
        let m = build_structured_quads(1, 1, [0.0, 0.0], [1.0, 1.0]).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.element_count(), 1);
        assert_eq!(m.boundary_edges.len(), 4);
    }

    #[test]
    fn beam_grid_counts() {
        let m = build_structured_quads(50, 10, [0.0, 0.0], [5000.0, 1000.0]).unwrap();
        assert_eq!(m.node_count(), 561);
        assert_eq!(m.element_count(), 500);
    }

    #[test]
    fn shared_center_node() {
        let m = build_structured_quads(2, 2, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let center = m
            .nodes
            .iter()
            .position(|p| p[0] == 0.5 && p[1] == 0.5)
            .expect("center node present");
        let sharing = m.elements.iter().filter(|e| e.conn.contains(&center)).count();
        assert_eq!(sharing, 4);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(build_structured_quads(0, 1, [0.0, 0.0], [1.0, 1.0]).is_err());
        assert!(build_structured_quads(1, 1, [0.0, 0.0], [0.0, 1.0]).is_err());
    }

    #[test]
    fn refinement_keeps_parent_nodes_bit_exact() {
        let m = build_structured_quads(3, 2, [0.25, -1.0], [7.0, 3.0]).unwrap();
        let f = refine_hierarchical(&m, 1).unwrap();
        assert_eq!(f.element_count(), 4 * m.element_count());
        for p in &m.nodes {
            assert!(f.nodes.iter().any(|q| q == p), "parent node {p:?} missing in child");
        }
        assert!(f.parent.is_some());
    }

    #[test]
    fn five_levels_of_refinement() {
        let m = build_structured_quads(25, 5, [0.0, 0.0], [5000.0, 1000.0]).unwrap();
        let f = refine_hierarchical(&m, 5).unwrap();
        let g = f.grid.unwrap();
        assert_eq!((g.nx, g.ny), (800, 160));
    }

    #[test]
    fn refinement_composes() {
        let m = build_structured_quads(2, 3, [0.0, 0.0], [2.0, 3.0]).unwrap();
        let a = refine_hierarchical(&m, 3).unwrap();
        let b = refine_hierarchical(&refine_hierarchical(&m, 1).unwrap(), 2).unwrap();
        assert_eq!(a.node_count(), b.node_count());
        for (p, q) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(p, q);
        }
    }

    #[test]
    fn nested_map_matches_all_coarse_nodes() {
        let m = build_structured_quads(4, 4, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let f = refine_hierarchical(&m, 2).unwrap();
        let map = build_nested_map(&m, &f).unwrap();
        for (c, &fi) in map.coarse_to_fine.iter().enumerate() {
            assert_eq!(m.nodes[c], f.nodes[fi]);
        }
        // interpolating at a coinciding fine node reproduces the coarse value
        for (c, &fi) in map.coarse_to_fine.iter().enumerate() {
            let (el, xi) = map.fine_to_coarse[fi];
            let conn = &m.elements[el].conn;
            let shape = crate::fem::q1_values(xi);
            let mut v = 0.0;
            for (a, &n) in conn.iter().enumerate() {
                let nodal = if n == c { 1.0 } else { 0.0 };
                v += shape[a] * nodal;
            }
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn non_nested_rejected() {
        let m = build_structured_quads(3, 3, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let f = build_structured_quads(4, 4, [0.0, 0.0], [1.0, 1.0]).unwrap();
        assert!(build_nested_map(&m, &f).is_err());
    }

    #[test]
    fn pairing_counts() {
        for (n, expect) in [(1usize, 3usize), (2, 5), (32, 65)] {
            let m = build_structured_quads(n, n, [0.0, 0.0], [1.0, 1.0]).unwrap();
            let p = build_periodic_pairing(&m, 1.0).unwrap();
            assert_eq!(p.constraint_count(), expect, "n = {n}");
        }
    }

    #[test]
    fn pairing_offsets_are_exact_translates() {
        let m = build_structured_quads(4, 4, [2.0, -1.0], [0.5, 0.5]).unwrap();
        let p = build_periodic_pairing(&m, 0.5).unwrap();
        for (s, ma, dir) in p.constraints() {
            let d = [m.nodes[s][0] - m.nodes[ma][0], m.nodes[s][1] - m.nodes[ma][1]];
            let want = match dir {
                PairDirection::LeftRight => [0.5, 0.0],
                PairDirection::BottomTop => [0.0, 0.5],
                PairDirection::Diagonal => [0.5, 0.5],
            };
            assert!((d[0] - want[0]).abs() < 1e-12 && (d[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pairing_slaves_unique() {
        let m = build_structured_quads(8, 8, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let p = build_periodic_pairing(&m, 1.0).unwrap();
        let mut slaves: Vec<usize> = p.constraints().map(|(s, _, _)| s).collect();
        let before = slaves.len();
        slaves.sort_unstable();
        slaves.dedup();
        assert_eq!(before, slaves.len());
    }

    #[test]
    fn pairing_rejects_non_congruent() {
        // a 1x1 cell with an extra midside node only on the right edge
        let text = "NODE 0 0 0\nNODE 1 1 0\nNODE 2 1 1\nNODE 3 0 1\nNODE 4 1 0.5\n\
                    ELEM 0 T3 0 1 4 0\nELEM 1 T3 0 4 2 0\nELEM 2 T3 0 2 3 1\n";
        let m = import_two_phase_mesh(text).unwrap();
        let err = build_periodic_pairing(&m, 1.0).unwrap_err();
        assert!(err.to_string().contains("unmatched") || err.to_string().contains("partner"));
    }

    #[test]
    fn import_two_triangles() {
        let text = "# unit square, two phases\nNODE 0 0 0\nNODE 1 1 0\nNODE 2 1 1\nNODE 3 0 1\n\
                    ELEM 0 T3 0 1 2 0\nELEM 1 T3 0 2 3 1\nEDGE 0 0 bottom\n";
        let m = import_two_phase_mesh(text).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.element_count(), 2);
        assert_eq!(m.elements[1].phase, 1);
        assert_eq!(m.nodes_on_tag("bottom"), vec![0, 1]);
    }

    #[test]
    fn import_reports_dangling_connectivity() {
        let text = "NODE 1 0 0\nNODE 2 1 0\nELEM 1 T3 1 2 99 0\n";
        let err = import_two_phase_mesh(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown node 99"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn import_rejects_duplicate_node() {
        let text = "NODE 7 0 0\nNODE 7 1 0\n";
        assert!(import_two_phase_mesh(text).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let m = build_structured_quads(3, 2, [0.0, 0.0], [1.5, 1.0]).unwrap();
        let text = export_mesh_text(&m);
        let back = import_two_phase_mesh(&text).unwrap();
        assert_eq!(m.nodes, back.nodes);
        for (a, b) in m.elements.iter().zip(&back.elements) {
            assert_eq!(a.conn, b.conn);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.phase, b.phase);
        }
        assert_eq!(m.boundary_edges.len(), back.boundary_edges.len());
    }
}
