//! Convex envelopes of grid functions and the Monge–Ampère measure of their
//! subdifferentials.
//!
//! The envelope is the lower convex hull of the lifted points `(x_i, u_i)`.
//! Points live in lattice units (integer node coordinates, stored exactly as
//! `f64`), so orientation tests on lattice points are exact; the hull itself is
//! a quickhull driven by exact `orient3d`, with strict visibility so coplanar
//! points never create degenerate faces.

use std::collections::HashMap;

use robust::{orient2d, orient3d, Coord, Coord3D};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Square};
use crate::rng::SplitMix64;
use crate::solver::DIRECTIONS;

/// Relative tolerance under which two facet gradients count as the same slope.
pub const GRADIENT_MERGE_TOL: f64 = 1e-10;

#[inline]
fn c2(p: &[f64; 3]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

#[inline]
fn c3(p: &[f64; 3]) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

#[inline]
fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

const NONE: u32 = u32::MAX;

struct Face {
    v: [u32; 3],
    /// `nb[k]` is across the edge `v[k] -> v[k+1]`
    nb: [u32; 3],
    outside: Vec<u32>,
    normal: [f64; 3],
    alive: bool,
}

struct Hull<'a> {
    pts: &'a [[f64; 3]],
    faces: Vec<Face>,
}

impl<'a> Hull<'a> {
    #[inline]
    fn visible(&self, f: usize, q: usize) -> bool {
        let v = self.faces[f].v;
        orient3d(
            c3(&self.pts[v[0] as usize]),
            c3(&self.pts[v[1] as usize]),
            c3(&self.pts[v[2] as usize]),
            c3(&self.pts[q]),
        ) < 0.0
    }

    #[inline]
    fn distance(&self, f: usize, q: usize) -> f64 {
        let a = &self.pts[self.faces[f].v[0] as usize];
        dot(&self.faces[f].normal, &sub(&self.pts[q], a))
    }

    fn add_face(&mut self, v: [u32; 3]) -> usize {
        let [a, b, c] = v.map(|i| &self.pts[i as usize]);
        let normal = cross(&sub(b, a), &sub(c, a));
        self.faces.push(Face {
            v,
            nb: [NONE; 3],
            outside: Vec::new(),
            normal,
            alive: true,
        });
        self.faces.len() - 1
    }

    /// Assigns `q` to the first face in `candidates` that sees it.
    fn assign(&mut self, q: u32, candidates: &[usize]) {
        for &f in candidates {
            if self.visible(f, q as usize) {
                self.faces[f].outside.push(q);
                return;
            }
        }
    }

    /// Builds the hull; `None` if all points are coplanar.
    fn build(pts: &'a [[f64; 3]]) -> Option<Hull<'a>> {
        let simplex = initial_simplex(pts)?;
        let mut hull = Hull {
            pts,
            faces: Vec::new(),
        };
        let [a, b, c, d] = simplex;
        let mut ids = Vec::new();
        for (tri, opp) in [([a, b, c], d), ([a, b, d], c), ([a, c, d], b), ([b, c, d], a)] {
            let o = orient3d(
                c3(&pts[tri[0]]),
                c3(&pts[tri[1]]),
                c3(&pts[tri[2]]),
                c3(&pts[opp]),
            );
            let tri = if o > 0.0 {
                tri
            } else {
                [tri[0], tri[2], tri[1]]
            };
            ids.push(hull.add_face(tri.map(|i| i as u32)));
        }
        hull.link(&ids);
        for q in 0..pts.len() {
            if simplex.contains(&q) {
                continue;
            }
            hull.assign(q as u32, &ids);
        }
        let mut stack: Vec<usize> = ids.clone();
        let mut mark: Vec<u64> = Vec::new();
        let mut stamp = 0u64;
        let mut visible: Vec<usize> = Vec::new();
        let mut horizon: Vec<(u32, u32, usize)> = Vec::new();
        let mut start_of = vec![NONE; pts.len()];
        while let Some(fi) = stack.pop() {
            if !hull.faces[fi].alive || hull.faces[fi].outside.is_empty() {
                continue;
            }
            let p = {
                let f = &hull.faces[fi];
                let mut best = f.outside[0];
                let mut bd = f64::NEG_INFINITY;
                for &q in &f.outside {
                    let d = hull.distance(fi, q as usize);
                    if d > bd {
                        bd = d;
                        best = q;
                    }
                }
                best
            };
            // visible region and its horizon; mark[f] = 2·stamp (+1 if visible)
            stamp += 1;
            if mark.len() < hull.faces.len() {
                mark.resize(hull.faces.len(), 0);
            }
            mark[fi] = 2 * stamp + 1;
            visible.clear();
            visible.push(fi);
            horizon.clear();
            let mut k = 0;
            while k < visible.len() {
                let f = visible[k];
                k += 1;
                for e in 0..3 {
                    let g = hull.faces[f].nb[e] as usize;
                    let vis = if mark[g] >> 1 == stamp {
                        mark[g] & 1 == 1
                    } else {
                        let s = hull.visible(g, p as usize);
                        mark[g] = 2 * stamp + s as u64;
                        if s {
                            visible.push(g);
                        }
                        s
                    };
                    if !vis {
                        let fv = hull.faces[f].v;
                        horizon.push((fv[e], fv[(e + 1) % 3], g));
                    }
                }
            }
            // new cone of faces over the horizon
            let mut new_ids = Vec::with_capacity(horizon.len());
            for &(a, b, g) in &horizon {
                let nf = hull.add_face([a, b, p]);
                hull.faces[nf].nb[0] = g as u32;
                let gv = hull.faces[g].v;
                for e in 0..3 {
                    if gv[e] == b && gv[(e + 1) % 3] == a {
                        hull.faces[g].nb[e] = nf as u32;
                    }
                }
                start_of[a as usize] = nf as u32;
                new_ids.push(nf);
            }
            for &nf in &new_ids {
                let b = hull.faces[nf].v[1];
                let next = start_of[b as usize] as usize;
                hull.faces[nf].nb[1] = next as u32;
                hull.faces[next].nb[2] = nf as u32;
            }
            let mut orphans = Vec::new();
            for &f in &visible {
                hull.faces[f].alive = false;
                orphans.append(&mut hull.faces[f].outside);
            }
            for q in orphans {
                if q != p {
                    hull.assign(q, &new_ids);
                }
            }
            for &nf in &new_ids {
                if !hull.faces[nf].outside.is_empty() {
                    stack.push(nf);
                }
            }
        }
        Some(hull)
    }

    fn link(&mut self, ids: &[usize]) {
        let mut edges: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        for &f in ids {
            let v = self.faces[f].v;
            for e in 0..3 {
                edges.insert((v[e], v[(e + 1) % 3]), (f, e));
            }
        }
        for &f in ids {
            let v = self.faces[f].v;
            for e in 0..3 {
                let (g, _) = edges[&(v[(e + 1) % 3], v[e])];
                self.faces[f].nb[e] = g as u32;
            }
        }
    }
}

fn initial_simplex(pts: &[[f64; 3]]) -> Option<[usize; 4]> {
    if pts.len() < 4 {
        return None;
    }
    // two extreme points along the widest axis
    let mut best = (0, 0, -1.0);
    for axis in 0..3 {
        let (mut lo, mut hi) = (0, 0);
        for (i, p) in pts.iter().enumerate() {
            if p[axis] < pts[lo][axis] {
                lo = i;
            }
            if p[axis] > pts[hi][axis] {
                hi = i;
            }
        }
        let w = pts[hi][axis] - pts[lo][axis];
        if w > best.2 {
            best = (lo, hi, w);
        }
    }
    let (a, b) = (best.0, best.1);
    if a == b {
        return None;
    }
    let ab = sub(&pts[b], &pts[a]);
    let mut c = None;
    let mut cd = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let n = cross(&ab, &sub(p, &pts[a]));
        let d = dot(&n, &n);
        if d > cd {
            cd = d;
            c = Some(i);
        }
    }
    let c = c?;
    let mut d = None;
    let mut dd = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let o = orient3d(c3(&pts[a]), c3(&pts[b]), c3(&pts[c]), c3(p));
        if o != 0.0 && o.abs() > dd {
            dd = o.abs();
            d = Some(i);
        }
    }
    Some([a, b, c, d?])
}

/// A lower facet of the envelope.
#[derive(Clone, Debug)]
pub struct Facet {
    /// Slope in physical units.
    pub gradient: [f64; 2],
    /// Height at the physical origin: the plane is `gradient · x + offset`.
    pub offset: f64,
    /// Indices into [`EnvelopeResult::points`].
    pub vertices: [usize; 3],
}

/// Subdifferential of the envelope at one point: a convex polygon of slopes.
#[derive(Clone, Debug, Default)]
pub struct Polytope {
    /// Extreme slopes in counter-clockwise order (or fewer than three points
    /// for degenerate atoms).
    pub vertices: Vec<[f64; 2]>,
    pub area: f64,
}

impl Polytope {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Whether `p` lies in the polygon (segments and points are handled with
    /// tolerance `tol`).
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        let v = &self.vertices;
        match v.len() {
            0 => false,
            1 => (v[0][0] - p[0]).hypot(v[0][1] - p[1]) <= tol,
            2 => seg_dist(v[0], v[1], p) <= tol,
            _ => {
                for k in 0..v.len() {
                    let a = v[k];
                    let b = v[(k + 1) % v.len()];
                    let cr = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                    if cr < -tol * len {
                        return false;
                    }
                }
                true
            }
        }
    }

    /// Largest distance from `p` to an extreme slope.
    pub fn max_distance_from(&self, p: [f64; 2]) -> f64 {
        self.vertices
            .iter()
            .map(|q| (q[0] - p[0]).hypot(q[1] - p[1]))
            .fold(0.0, f64::max)
    }
}

fn seg_dist(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0)
    };
    (a[0] + t * d[0] - p[0]).hypot(a[1] + t * d[1] - p[1])
}

/// Convex hull (counter-clockwise) of slopes after merging near-duplicates,
/// and its area.
pub fn slope_polygon(slopes: &[[f64; 2]]) -> Polytope {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(slopes.len());
    for s in slopes {
        let scale = 1.0 + s[0].abs().max(s[1].abs());
        if !pts.iter().any(|q| {
            (q[0] - s[0]).abs().max((q[1] - s[1]).abs()) <= GRADIENT_MERGE_TOL * scale
        }) {
            pts.push(*s);
        }
    }
    if pts.len() < 3 {
        return Polytope {
            vertices: pts,
            area: 0.0,
        };
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cr = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cr(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cr(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let n = lower.len();
    let mut area = 0.0;
    for k in 0..n {
        let a = lower[k];
        let b = lower[(k + 1) % n];
        area += a[0] * b[1] - a[1] * b[0];
    }
    Polytope {
        vertices: lower,
        area: (0.5 * area).max(0.0),
    }
}

/// An open axis-aligned box `(lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Region {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Region { lo, hi }
    }

    pub fn interior_of(sq: Square) -> Self {
        Region {
            lo: sq.lo,
            hi: sq.hi(),
        }
    }

    /// Strict containment, with a relative guard so nodes that sit on the
    /// boundary in exact arithmetic are excluded despite rounding.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        let eps = 1e-9 * (1.0 + (self.hi[0] - self.lo[0]).abs() + (self.hi[1] - self.lo[1]).abs());
        (0..2).all(|a| x[a] > self.lo[a] + eps && x[a] < self.hi[a] - eps)
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }
}

/// One atom of the subdifferential measure: a hull vertex with bounded
/// subdifferential.
#[derive(Clone, Debug)]
pub struct Atom {
    pub point: usize,
    pub position: [f64; 2],
    pub polytope: Polytope,
}

#[derive(Clone, Debug)]
pub struct EnvelopeResult {
    /// `Γ_u` at every node covered by the hull (NaN elsewhere).
    pub envelope: GridFunction,
    pub facets: Vec<Facet>,
    /// Lifted points in physical coordinates.
    pub points: Vec<[f64; 3]>,
    /// Grid node of each point (`None` for extra points).
    pub point_node: Vec<Option<usize>>,
    /// Lower facets incident to each point that is a hull vertex.
    pub vertex_facets: Vec<Vec<usize>>,
    /// Hull vertices all of whose hull faces are lower facets.
    pub bounded: Vec<bool>,
    /// Lower facets whose closed projection contains each node.
    pub node_facets: Vec<Vec<u32>>,
    /// `u - Γ_u <= max(1e-10, h²)`.
    pub contact: Vec<bool>,
    pub contact_tol: f64,
}

impl EnvelopeResult {
    pub fn h(&self) -> f64 {
        self.envelope.h()
    }

    /// Atoms of all bounded hull vertices.
    pub fn atoms(&self) -> Vec<Atom> {
        (0..self.points.len())
            .filter(|&p| self.bounded[p])
            .map(|p| Atom {
                point: p,
                position: [self.points[p][0], self.points[p][1]],
                polytope: self.vertex_polytope(p),
            })
            .collect()
    }

    fn vertex_polytope(&self, p: usize) -> Polytope {
        let slopes: Vec<[f64; 2]> = self.vertex_facets[p]
            .iter()
            .map(|&f| self.facets[f].gradient)
            .collect();
        slope_polygon(&slopes)
    }

    /// `|∂Γ_u(region)|`: total area of the atoms strictly inside `region`.
    pub fn measure(&self, region: &Region) -> f64 {
        let mut total = 0.0;
        for p in 0..self.points.len() {
            if self.bounded[p] && region.contains([self.points[p][0], self.points[p][1]]) {
                total += self.vertex_polytope(p).area;
            }
        }
        total
    }

    /// Subdifferential of `Γ_u` at node `(i, j)`: the hull of the slopes of all
    /// lower facets whose closure contains the node. Empty off the hull.
    pub fn subdiff_node(&self, i: usize, j: usize) -> Polytope {
        let k = self.envelope.idx(i, j);
        let slopes: Vec<[f64; 2]> = self.node_facets[k]
            .iter()
            .map(|&f| self.facets[f as usize].gradient)
            .collect();
        slope_polygon(&slopes)
    }

    pub fn contact_count(&self) -> usize {
        self.contact.iter().filter(|&&c| c).count()
    }

    /// All facet slopes incident to bounded vertices (these must lie in any
    /// slope box used by the Monte Carlo oracle).
    pub fn interior_slopes(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.points.len())
            .filter(|&p| self.bounded[p])
            .flat_map(move |p| self.vertex_facets[p].iter().map(move |&f| self.facets[f].gradient))
    }
}

/// Lower convex hull of the lifted grid (all nodes, boundary included).
pub fn convex_envelope(u: &GridFunction) -> EnvelopeResult {
    envelope_of_points(u, None, &[])
}

/// Lower convex hull of the nodes with `mask[k]` set, plus `extra` points
/// `(x, y, value)` in physical coordinates.
pub fn convex_envelope_masked(u: &GridFunction, mask: &[bool], extra: &[[f64; 3]]) -> EnvelopeResult {
    envelope_of_points(u, Some(mask), extra)
}

fn envelope_of_points(u: &GridFunction, mask: Option<&[bool]>, extra: &[[f64; 3]]) -> EnvelopeResult {
    let n = u.n();
    let h = u.h();
    let lo = u.square().lo;
    let mut lattice: Vec<[f64; 3]> = Vec::with_capacity(n * n + extra.len());
    let mut point_node = Vec::with_capacity(n * n + extra.len());
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            if mask.map_or(true, |m| m[k]) {
                lattice.push([i as f64, j as f64, u.values()[k]]);
                point_node.push(Some(k));
            }
        }
    }
    for e in extra {
        lattice.push([(e[0] - lo[0]) / h, (e[1] - lo[1]) / h, e[2]]);
        point_node.push(None);
    }
    let to_phys = |p: &[f64; 3]| [lo[0] + p[0] * h, lo[1] + p[1] * h, p[2]];
    let points: Vec<[f64; 3]> = lattice.iter().map(to_phys).collect();
    let contact_tol = 1e-10f64.max(h * h);
    let np = lattice.len();
    let mut env = vec![f64::NAN; n * n];
    let mut node_facets: Vec<Vec<u32>> = vec![Vec::new(); n * n];
    let mut facets = Vec::new();
    let mut vertex_facets: Vec<Vec<usize>> = vec![Vec::new(); np];
    let mut bounded = vec![false; np];

    match Hull::build(&lattice) {
        None => {
            // all lifted points coplanar: the envelope is that plane
            if np >= 3 {
                let g = coplanar_gradient(&lattice);
                let a = &lattice[0];
                let grad = [g[0] / h, g[1] / h];
                let offset = a[2] - g[0] * a[0] - g[1] * a[1] - grad[0] * lo[0] - grad[1] * lo[1];
                facets.push(Facet {
                    gradient: grad,
                    offset,
                    vertices: [0, 0, 0],
                });
                for j in 0..n {
                    for i in 0..n {
                        let k = j * n + i;
                        env[k] = a[2] + g[0] * (i as f64 - a[0]) + g[1] * (j as f64 - a[1]);
                        node_facets[k].push(0);
                    }
                }
            }
        }
        Some(hull) => {
            let mut is_vertex = vec![false; np];
            let mut has_other = vec![false; np];
            for f in hull.faces.iter().filter(|f| f.alive) {
                let [a, b, c] = f.v.map(|i| i as usize);
                let o = orient2d(c2(&lattice[a]), c2(&lattice[b]), c2(&lattice[c]));
                for &v in &[a, b, c] {
                    is_vertex[v] = true;
                }
                if o < 0.0 {
                    let fid = facets.len();
                    let nrm = f.normal;
                    let g = [-nrm[0] / nrm[2], -nrm[1] / nrm[2]];
                    let grad = [g[0] / h, g[1] / h];
                    let pa = &lattice[a];
                    let z0 = pa[2] - g[0] * pa[0] - g[1] * pa[1];
                    facets.push(Facet {
                        gradient: grad,
                        offset: z0 - grad[0] * lo[0] - grad[1] * lo[1],
                        vertices: [a, b, c],
                    });
                    for &v in &[a, b, c] {
                        vertex_facets[v].push(fid);
                    }
                    rasterize(&lattice, [a, b, c], g, z0, n, fid as u32, &mut env, &mut node_facets);
                } else {
                    for &v in &[a, b, c] {
                        has_other[v] = true;
                    }
                }
            }
            for p in 0..np {
                bounded[p] = is_vertex[p] && !has_other[p] && !vertex_facets[p].is_empty();
            }
        }
    }
    // exact values at hull vertices, and never above u
    for (p, node) in point_node.iter().enumerate() {
        if let Some(k) = node {
            if !vertex_facets[p].is_empty() {
                env[*k] = u.values()[*k];
            }
        }
    }
    let mut contact = vec![false; n * n];
    for k in 0..n * n {
        let uk = u.values()[k];
        if env[k].is_finite() && env[k] > uk {
            env[k] = uk;
        }
        let included = mask.map_or(true, |m| m[k]);
        contact[k] = included && env[k].is_finite() && uk - env[k] <= contact_tol;
    }
    EnvelopeResult {
        envelope: GridFunction::new(u.square(), n, env).expect("same grid"),
        facets,
        points,
        point_node,
        vertex_facets,
        bounded,
        node_facets,
        contact,
        contact_tol,
    }
}

fn coplanar_gradient(pts: &[[f64; 3]]) -> [f64; 2] {
    // any non-collinear triple spans the common plane
    let a = pts[0];
    for i in 1..pts.len() {
        for k in (i + 1)..pts.len() {
            let (b, c) = (pts[i], pts[k]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if det.abs() > 0.5 {
                let dz1 = b[2] - a[2];
                let dz2 = c[2] - a[2];
                return [
                    (dz1 * (c[1] - a[1]) - dz2 * (b[1] - a[1])) / det,
                    ((b[0] - a[0]) * dz2 - (c[0] - a[0]) * dz1) / det,
                ];
            }
        }
    }
    [0.0, 0.0]
}

#[allow(clippy::too_many_arguments)]
fn rasterize(
    pts: &[[f64; 3]],
    tri: [usize; 3],
    g: [f64; 2],
    z0: f64,
    n: usize,
    fid: u32,
    env: &mut [f64],
    node_facets: &mut [Vec<u32>],
) {
    let [a, b, c] = tri.map(|i| pts[i]);
    let xmin = a[0].min(b[0]).min(c[0]).ceil().max(0.0) as usize;
    let xmax = a[0].max(b[0]).max(c[0]).floor().min((n - 1) as f64);
    let ymin = a[1].min(b[1]).min(c[1]).ceil().max(0.0) as usize;
    let ymax = a[1].max(b[1]).max(c[1]).floor().min((n - 1) as f64);
    if xmax < 0.0 || ymax < 0.0 {
        return;
    }
    let (xmax, ymax) = (xmax as usize, ymax as usize);
    for j in ymin..=ymax {
        for i in xmin..=xmax {
            let q = [i as f64, j as f64, 0.0];
            // lower faces are clockwise in the plane
            if orient2d(c2(&a), c2(&b), c2(&q)) <= 0.0
                && orient2d(c2(&b), c2(&c), c2(&q)) <= 0.0
                && orient2d(c2(&c), c2(&a), c2(&q)) <= 0.0
            {
                let k = j * n + i;
                let z = z0 + g[0] * q[0] + g[1] * q[1];
                env[k] = if env[k].is_nan() { z } else { env[k].max(z) };
                node_facets[k].push(fid);
            }
        }
    }
}

/// `|∂Γ_u(region)|` from the hull.
///
/// Skips nodes lying on or above the chord of two opposite neighbours (exact
/// test): they are never hull vertices, and the square's corners (which fix
/// the planar hull) are always kept, so the bounded vertices and their atoms
/// are unchanged.
pub fn subdiff_measure(u: &GridFunction, region: &Region) -> f64 {
    let n = u.n();
    let h = u.h();
    let lo = u.square().lo;
    let vals = u.values();
    let mut lattice: Vec<[f64; 3]> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let z = vals[j * n + i];
            let above_chord = DIRECTIONS.iter().any(|v| {
                let (ip, jp) = (i as i64 + v[0], j as i64 + v[1]);
                let (im, jm) = (i as i64 - v[0], j as i64 - v[1]);
                let inside = |a: i64, b: i64| a >= 0 && b >= 0 && (a as usize) < n && (b as usize) < n;
                if !inside(ip, jp) || !inside(im, jm) {
                    return false;
                }
                let zp = vals[jp as usize * n + ip as usize];
                let zm = vals[jm as usize * n + im as usize];
                // middle point not strictly below the chord
                orient2d(Coord { x: -1.0, y: zm }, Coord { x: 1.0, y: zp }, Coord { x: 0.0, y: z }) >= 0.0
            });
            if !above_chord {
                lattice.push([i as f64, j as f64, z]);
            }
        }
    }
    let hull = match Hull::build(&lattice) {
        Some(hull) => hull,
        None => return 0.0,
    };
    let np = lattice.len();
    let mut has_other = vec![false; np];
    let mut incident: Vec<(u32, [f64; 2])> = Vec::new();
    for f in hull.faces.iter().filter(|f| f.alive) {
        let [a, b, c] = f.v.map(|i| i as usize);
        if orient2d(c2(&lattice[a]), c2(&lattice[b]), c2(&lattice[c])) < 0.0 {
            let g = [-f.normal[0] / f.normal[2] / h, -f.normal[1] / f.normal[2] / h];
            for v in [a, b, c] {
                incident.push((v as u32, g));
            }
        } else {
            for v in [a, b, c] {
                has_other[v] = true;
            }
        }
    }
    incident.sort_by_key(|e| e.0);
    let mut total = 0.0;
    let mut slopes = Vec::new();
    for group in incident.chunk_by(|x, y| x.0 == y.0) {
        let p = group[0].0 as usize;
        let x = [lo[0] + lattice[p][0] * h, lo[1] + lattice[p][1] * h];
        if has_other[p] || !region.contains(x) {
            continue;
        }
        slopes.clear();
        slopes.extend(group.iter().map(|e| e.1));
        total += slope_polygon(&slopes).area;
    }
    total
}

/// Subdifferential polytope at a node, together with a supporting-plane
/// certificate.
#[derive(Clone, Debug)]
pub struct CertifiedPolytope {
    pub polytope: Polytope,
    /// Every extreme slope `p` satisfies `u(y) >= Γ_u(x) + p·(y - x)` at
    /// every node `y` (up to rounding).
    pub certified: bool,
    /// Worst violation of the supporting-plane inequality.
    pub worst_violation: f64,
}

/// Checks `u(y) >= base + p·(y - x)` at every node `y` (optionally masked);
/// returns the largest violation.
pub fn support_violation(u: &GridFunction, mask: Option<&[bool]>, x: [f64; 2], base: f64, p: [f64; 2]) -> f64 {
    let n = u.n();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            if mask.map_or(false, |m| !m[k]) {
                continue;
            }
            let y = u.node(i, j);
            let plane = base + p[0] * (y[0] - x[0]) + p[1] * (y[1] - x[1]);
            worst = worst.max(plane - u.values()[k]);
        }
    }
    worst
}

pub fn subdiff_at(u: &GridFunction, i: usize, j: usize) -> CertifiedPolytope {
    let env = convex_envelope(u);
    certify_node(u, &env, None, i, j)
}

/// Supporting-plane certificate for the subdifferential at node `(i, j)`.
pub fn certify_node(
    u: &GridFunction,
    env: &EnvelopeResult,
    mask: Option<&[bool]>,
    i: usize,
    j: usize,
) -> CertifiedPolytope {
    let polytope = env.subdiff_node(i, j);
    let x = u.node(i, j);
    let base = env.envelope.get(i, j);
    let scale = 1.0 + u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    for p in &polytope.vertices {
        worst = worst.max(support_violation(u, mask, x, base, *p));
    }
    CertifiedPolytope {
        certified: !polytope.is_empty() && worst <= 1e-9 * scale,
        polytope,
        worst_violation: worst,
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub hits: usize,
    pub samples: usize,
}

/// Independent oracle for `|∂Γ_u(region)|`: slopes `p` drawn uniformly from
/// `slope_box`, counting those whose minimizer of `u - p·x` lies strictly
/// inside `region`. Fails if a relevant facet slope falls outside the box.
pub fn mc_subdiff_measure(
    u: &GridFunction,
    region: &Region,
    n_slopes: usize,
    slope_box: ([f64; 2], [f64; 2]),
    seed: u64,
) -> Result<McEstimate> {
    let (blo, bhi) = slope_box;
    if !(bhi[0] > blo[0] && bhi[1] > blo[1]) {
        return Err(Error::InvalidInput("empty slope box".into()));
    }
    let env = convex_envelope(u);
    for g in env.interior_slopes() {
        let margin = 1e-9 * (1.0 + g[0].abs() + g[1].abs());
        if g[0] < blo[0] - margin || g[0] > bhi[0] + margin || g[1] < blo[1] - margin || g[1] > bhi[1] + margin {
            return Err(Error::SlopeBox(g[0], g[1]));
        }
    }
    let n = u.n();
    let nodes: Vec<[f64; 2]> = (0..n * n).map(|k| u.node(k % n, k / n)).collect();
    let inside: Vec<bool> = nodes.iter().map(|x| region.contains(*x)).collect();
    let vals = u.values();
    let mut rng = SplitMix64::new(seed);
    let mut hits = 0usize;
    for _ in 0..n_slopes {
        let p = [rng.uniform(blo[0], bhi[0]), rng.uniform(blo[1], bhi[1])];
        let mut best = 0;
        let mut bv = f64::INFINITY;
        for (k, x) in nodes.iter().enumerate() {
            let v = vals[k] - p[0] * x[0] - p[1] * x[1];
            if v < bv {
                bv = v;
                best = k;
            }
        }
        if inside[best] {
            hits += 1;
        }
    }
    let area = (bhi[0] - blo[0]) * (bhi[1] - blo[1]);
    let f = hits as f64 / n_slopes.max(1) as f64;
    Ok(McEstimate {
        value: area * f,
        std_error: area * (f * (1.0 - f) / n_slopes.max(1) as f64).sqrt(),
        hits,
        samples: n_slopes,
    })
}

/// Bounding box of the relevant facet slopes, padded by `pad` (relative).
pub fn slope_box_for(u: &GridFunction, pad: f64) -> ([f64; 2], [f64; 2]) {
    let env = convex_envelope(u);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for g in env.interior_slopes() {
        for a in 0..2 {
            lo[a] = lo[a].min(g[a]);
            hi[a] = hi[a].max(g[a]);
        }
    }
    if !lo[0].is_finite() {
        return ([-1.0, -1.0], [1.0, 1.0]);
    }
    let w = [(hi[0] - lo[0]).max(1e-6), (hi[1] - lo[1]).max(1e-6)];
    (
        [lo[0] - pad * w[0], lo[1] - pad * w[1]],
        [hi[0] + pad * w[0], hi[1] + pad * w[1]],
    )
}

/// Test configuration with an envelope that is not `C^{1,1}`: on the
/// non-convex domain `U = [-R, R]^2 ∪ {u > w}` with
/// `u = x1²/2 - max(0, |x2| - R)²/(2R)`, the convex envelope of `u` is
/// `w = 2 max(0, x1 - 1) + max(0, |x1 - 1| - 1)²/2`, which has a kink along
/// `x1 = 1` even though `P+(D²u) >= -1`.
pub struct KinkExample {
    pub r: f64,
    pub u: GridFunction,
    /// Grid nodes inside `U`.
    pub mask: Vec<bool>,
    /// The two tips `(1, ±(R + √R))` of `U`, where `u = w = 0`.
    pub extra: Vec<[f64; 3]>,
}

impl KinkExample {
    pub fn new(r: f64, h: f64) -> Self {
        assert!(r > 1.0);
        let side = 4.0 * r;
        let n = (side / h).round() as usize + 1;
        let u = GridFunction::from_fn(Square::new([-2.0 * r, -2.0 * r], side), n, |x| Self::u_at(r, x));
        let mask = (0..n * n)
            .map(|k| {
                let x = u.node(k % n, k / n);
                let in_box = x[0].abs() <= r + 1e-12 && x[1].abs() <= r + 1e-12;
                in_box || Self::u_at(r, x) > Self::w_at(x) + 1e-14
            })
            .collect();
        let tip = r + r.sqrt();
        KinkExample {
            r,
            u,
            mask,
            extra: vec![[1.0, tip, 0.0], [1.0, -tip, 0.0]],
        }
    }

    pub fn u_at(r: f64, x: [f64; 2]) -> f64 {
        let t = (x[1].abs() - r).max(0.0);
        0.5 * x[0] * x[0] - t * t / (2.0 * r)
    }

    pub fn w_at(x: [f64; 2]) -> f64 {
        let t = ((x[0] - 1.0).abs() - 1.0).max(0.0);
        2.0 * (x[0] - 1.0).max(0.0) + 0.5 * t * t
    }

    pub fn envelope(&self) -> EnvelopeResult {
        convex_envelope_masked(&self.u, &self.mask, &self.extra)
    }

    /// Node index of the physical point `x` (must be a node).
    pub fn node_at(&self, x: [f64; 2]) -> (usize, usize) {
        let h = self.u.h();
        let lo = self.u.square().lo;
        (((x[0] - lo[0]) / h).round() as usize, ((x[1] - lo[1]) / h).round() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TriadicCube;

    fn q0(n: usize, f: impl Fn([f64; 2]) -> f64) -> GridFunction {
        GridFunction::on_cube(&TriadicCube::origin(0), n, f)
    }

    #[test]
    fn convex_input_is_its_own_envelope() {
        let u = q0(21, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let e = convex_envelope(&u);
        assert!(e.envelope.max_abs_diff(&u) < 1e-12);
        assert!(e.contact.iter().all(|&c| c));
    }

    #[test]
    fn envelope_is_below_and_convex_along_lines() {
        let u = q0(25, |x| (6.0 * x[0]).sin() * (5.0 * x[1]).cos() + x[0] * x[1]);
        let e = convex_envelope(&u);
        let g = &e.envelope;
        let n = u.n();
        for k in 0..n * n {
            assert!(g.values()[k] <= u.values()[k]);
        }
        for j in 0..n {
            for i in 1..n - 1 {
                assert!(g.get(i - 1, j) + g.get(i + 1, j) - 2.0 * g.get(i, j) >= -1e-12);
                assert!(g.get(j, i - 1) + g.get(j, i + 1) - 2.0 * g.get(j, i) >= -1e-12);
            }
        }
        // every facet supports the envelope from below
        for f in &e.facets {
            for j in 0..n {
                for i in 0..n {
                    let x = u.node(i, j);
                    let plane = f.gradient[0] * x[0] + f.gradient[1] * x[1] + f.offset;
                    assert!(plane <= u.get(i, j) + 1e-9);
                }
            }
        }
    }

    fn lower_hull_1d(xs: &[f64], ys: &[f64]) -> Vec<f64> {
        // oracle: Γ(x_k) = min over pairs (a <= k <= b) of the chord value
        let n = xs.len();
        (0..n)
            .map(|k| {
                let mut best = ys[k];
                for a in 0..=k {
                    for b in k..n {
                        if a == b {
                            continue;
                        }
                        let t = (xs[k] - xs[a]) / (xs[b] - xs[a]);
                        best = best.min(ys[a] + t * (ys[b] - ys[a]));
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn double_well_matches_one_dimensional_oracle() {
        let u = q0(31, |x| {
            let s = x[0] * x[0] - 0.0625;
            s * s
        });
        let e = convex_envelope(&u);
        let n = u.n();
        let xs: Vec<f64> = (0..n).map(|i| u.node(i, 0)[0]).collect();
        let ys: Vec<f64> = (0..n).map(|i| u.get(i, 0)).collect();
        let oracle = lower_hull_1d(&xs, &ys);
        for j in 0..n {
            for i in 0..n {
                assert!((e.envelope.get(i, j) - oracle[i]).abs() < 1e-12);
            }
        }
        // flat between the wells
        let mid = e.envelope.get(n / 2, 7);
        for i in 0..n {
            if xs[i].abs() <= 0.2 {
                assert!((e.envelope.get(i, 7) - mid).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_has_zero_measure_and_single_slope() {
        let u = q0(17, |x| 0.3 * x[0] - 1.7 * x[1] + 0.2);
        let r = Region::interior_of(u.square());
        assert_eq!(subdiff_measure(&u, &r), 0.0);
        let c = subdiff_at(&u, 8, 8);
        assert_eq!(c.polytope.vertices.len(), 1);
        assert!((c.polytope.vertices[0][0] - 0.3).abs() < 1e-9);
        assert!((c.polytope.vertices[0][1] + 1.7).abs() < 1e-9);
        assert!(c.certified);
        let z = q0(9, |_| 0.0);
        assert_eq!(subdiff_measure(&z, &r), 0.0);
    }

    #[test]
    fn quadratic_measure_close_to_gradient_image() {
        let u = q0(41, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let m = subdiff_measure(&u, &Region::interior_of(u.square()));
        // interior vertices see the slopes of (-1/2 + h/2, 1/2 - h/2)^2
        let h = u.h();
        let expect = (1.0 - h) * (1.0 - h);
        assert!((m - expect).abs() < 1e-9, "{m} vs {expect}");
    }

    #[test]
    fn filtered_measure_matches_full_hull() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let (a, b, c) = (rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.0, 2.0));
            let u = q0(19, |x| a * (4.0 * x[0]).sin() * x[1] + b * x[0] * x[0] + c * x[1] * x[1] + 0.3 * (x[0] - x[1]).abs());
            let r = Region::new([-0.3, -0.5], [0.5, 0.2]);
            let full = convex_envelope(&u).measure(&r);
            assert!((subdiff_measure(&u, &r) - full).abs() <= 1e-12 * (1.0 + full));
        }
    }

    #[test]
    fn kink_subdifferential_contains_segment() {
        let u = q0(21, |x| x[0].abs());
        let c = subdiff_at(&u, 10, 10);
        assert!(c.certified);
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            assert!(c.polytope.contains([t, 0.0], u.h()));
        }
    }

    #[test]
    fn mc_oracle_agrees() {
        let u = q0(17, |x| 0.5 * (x[0] * x[0] + 2.0 * x[1] * x[1]) + 0.3 * (3.0 * x[0]).sin());
        let r = Region::interior_of(u.square());
        let exact = subdiff_measure(&u, &r);
        let bx = slope_box_for(&u, 0.1);
        let mc = mc_subdiff_measure(&u, &r, 20_000, bx, 3).unwrap();
        assert!((mc.value - exact).abs() <= 4.0 * mc.std_error, "{} vs {exact}", mc.value);
        let small = ([0.0, 0.0], [0.01, 0.01]);
        assert!(matches!(mc_subdiff_measure(&u, &r, 10, small, 3), Err(Error::SlopeBox(..))));
        let aff = q0(17, |x| x[0] - x[1]);
        let mc = mc_subdiff_measure(&aff, &r, 1000, ([0.0, -2.0], [2.0, 0.0]), 1).unwrap();
        assert_eq!(mc.value, 0.0);
    }

    #[test]
    fn slope_polygon_merges_and_measures() {
        let sq = slope_polygon(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [1.0, 1.0 + 1e-13]]);
        assert_eq!(sq.vertices.len(), 4);
        assert!((sq.area - 1.0).abs() < 1e-12);
        assert!(sq.contains([0.5, 0.99], 0.0));
        assert!(!sq.contains([1.5, 0.5], 1e-9));
    }

    #[test]
    fn kink_example_envelope() {
        let ex = KinkExample::new(2.0, 1.0 / 8.0);
        let e = ex.envelope();
        let n = ex.u.n();
        let h = ex.u.h();
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                if ex.mask[k] {
                    let w = KinkExample::w_at(ex.u.node(i, j));
                    assert!((e.envelope.values()[k] - w).abs() <= h * h, "{:?}", ex.u.node(i, j));
                }
            }
        }
        let (i, j) = ex.node_at([0.0, 0.0]);
        assert!(certify_node(&ex.u, &e, Some(&ex.mask), i, j).polytope.contains([0.0, 0.0], 1e-9));
        let (i, j) = ex.node_at([1.0, 0.0]);
        assert!(certify_node(&ex.u, &e, Some(&ex.mask), i, j).polytope.contains([2.0, 0.0], 1e-9));
    }
}
