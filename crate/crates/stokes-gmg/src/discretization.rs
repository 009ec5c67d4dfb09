//! Equal-order bilinear discretization of the stationary Stokes equations.
//!
//! Velocity and pressure both live on mesh vertices. The saddle-point system
//!
//! ```text
//!   | A  B | |u|   |f|
//!   | Bt C | |p| = |0|
//! ```
//!
//! couples the viscous block `A` (two decoupled scalar stiffness blocks),
//! the discrete gradient `B`, and a pressure stiffness `C` scaled by the
//! squared element diameter that stabilizes the otherwise unstable
//! equal-order pair. `C` acts on pressure only and vanishes on constants,
//! so the continuity equation stays consistent for exactly divergence-free
//! fields.
//!
//! Hanging vertices and Dirichlet values are eliminated before the system
//! is built: every constrained value is an affine function of free values,
//! and the assembled matrix is the congruent restriction to free values
//! with the inhomogeneous part folded into the right-hand side. The result
//! is bitwise symmetric by construction.
//!
//! Global ordering: the two velocity components of vertex 0, then of vertex
//! 1, and so on, followed by one pressure value per vertex. Free equations
//! keep that relative order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{BoundaryTag, Point, QuadMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    pub viscosity: f64,
    /// Scale of the pressure stabilization term.
    pub stabilization_beta: f64,
}

impl PhysParams {
    /// Default stabilization: 0.1 divided by the viscosity, which balances
    /// the pressure term against the viscous block.
    pub fn new(viscosity: f64) -> Self {
        PhysParams { viscosity, stabilization_beta: 0.1 / viscosity }
    }

    pub fn with_beta(viscosity: f64, stabilization_beta: f64) -> Self {
        PhysParams { viscosity, stabilization_beta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity > 0.0 && self.viscosity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "viscosity must be positive and finite, got {}",
                self.viscosity
            )));
        }
        if !(self.stabilization_beta > 0.0 && self.stabilization_beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stabilization scale must be positive and finite, got {}",
                self.stabilization_beta
            )));
        }
        Ok(())
    }
}

/// Velocity boundary condition attached to one boundary tag.
#[derive(Clone)]
pub enum VelocityBc {
    NoSlip,
    Constant([f64; 2]),
    /// Parabolic profile in y: `4 v y (H - y) / H^2` in x-direction, zero in y.
    InflowParabola { peak_velocity: f64, channel_height: f64 },
    Function(Rc<dyn Fn(Point) -> [f64; 2]>),
    /// Natural outflow: no constraint on the velocity.
    ZeroTraction,
}

impl std::fmt::Debug for VelocityBc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VelocityBc::NoSlip => write!(f, "NoSlip"),
            VelocityBc::Constant(v) => write!(f, "Constant({v:?})"),
            VelocityBc::InflowParabola { peak_velocity, channel_height } => write!(
                f,
                "InflowParabola {{ peak_velocity: {peak_velocity}, channel_height: {channel_height} }}"
            ),
            VelocityBc::Function(_) => write!(f, "Function(..)"),
            VelocityBc::ZeroTraction => write!(f, "ZeroTraction"),
        }
    }
}

impl VelocityBc {
    pub fn value(&self, p: Point) -> Option<[f64; 2]> {
        match self {
            VelocityBc::NoSlip => Some([0.0, 0.0]),
            VelocityBc::Constant(v) => Some(*v),
            VelocityBc::InflowParabola { peak_velocity, channel_height } => {
                let h = *channel_height;
                Some([4.0 * peak_velocity * p[1] * (h - p[1]) / (h * h), 0.0])
            }
            VelocityBc::Function(f) => Some(f(p)),
            VelocityBc::ZeroTraction => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    pub velocity: BTreeMap<BoundaryTag, VelocityBc>,
    /// Fix the pressure at one reference vertex (needed when no natural
    /// outflow determines the pressure level).
    pub pressure_pin: bool,
    /// Let the lid value win over the wall value at shared corner vertices.
    pub leaky_lid: bool,
}

impl BoundaryConditions {
    /// Driven cavity: homogeneous walls, lid moving with unit speed.
    pub fn cavity() -> Self {
        let mut velocity = BTreeMap::new();
        velocity.insert(BoundaryTag::DirichletWall, VelocityBc::NoSlip);
        velocity.insert(BoundaryTag::DirichletLid, VelocityBc::Constant([1.0, 0.0]));
        BoundaryConditions { velocity, pressure_pin: true, leaky_lid: false }
    }

    /// Channel around a cylinder: parabolic inflow, natural outflow.
    pub fn channel(peak_velocity: f64, channel_height: f64) -> Self {
        let mut velocity = BTreeMap::new();
        velocity.insert(BoundaryTag::DirichletWall, VelocityBc::NoSlip);
        velocity.insert(BoundaryTag::Cylinder, VelocityBc::NoSlip);
        velocity.insert(
            BoundaryTag::DirichletInflow,
            VelocityBc::InflowParabola { peak_velocity, channel_height },
        );
        velocity.insert(BoundaryTag::NeumannOutflow, VelocityBc::ZeroTraction);
        BoundaryConditions { velocity, pressure_pin: false, leaky_lid: false }
    }

    /// Prescribes a known velocity field on the whole boundary.
    pub fn prescribed_velocity(exact: Rc<dyn Fn(Point) -> [f64; 2]>) -> Self {
        let mut velocity = BTreeMap::new();
        for tag in [
            BoundaryTag::DirichletWall,
            BoundaryTag::DirichletLid,
            BoundaryTag::DirichletInflow,
            BoundaryTag::NeumannOutflow,
            BoundaryTag::Cylinder,
        ] {
            velocity.insert(tag, VelocityBc::Function(exact.clone()));
        }
        BoundaryConditions { velocity, pressure_pin: true, leaky_lid: false }
    }

    /// No essential conditions at all (the operator is singular; useful for
    /// testing transfer operators on unconstrained spaces).
    pub fn natural() -> Self {
        let mut velocity = BTreeMap::new();
        for tag in [
            BoundaryTag::DirichletWall,
            BoundaryTag::DirichletLid,
            BoundaryTag::DirichletInflow,
            BoundaryTag::NeumannOutflow,
            BoundaryTag::Cylinder,
        ] {
            velocity.insert(tag, VelocityBc::ZeroTraction);
        }
        BoundaryConditions { velocity, pressure_pin: false, leaky_lid: false }
    }

    fn tag_priority(&self, tag: BoundaryTag) -> u8 {
        match tag {
            BoundaryTag::DirichletLid if self.leaky_lid => 5,
            BoundaryTag::DirichletWall => 4,
            BoundaryTag::Cylinder => 3,
            BoundaryTag::DirichletInflow => 2,
            BoundaryTag::DirichletLid => 1,
            BoundaryTag::NeumannOutflow => 0,
        }
    }

    /// The boundary condition that governs a vertex incident to `tags`,
    /// or None if every incident piece leaves the velocity free.
    pub fn dirichlet_for(&self, tags: &BTreeSet<BoundaryTag>) -> Option<&VelocityBc> {
        tags.iter()
            .filter_map(|t| {
                let bc = self.velocity.get(t)?;
                if matches!(bc, VelocityBc::ZeroTraction) {
                    None
                } else {
                    Some((self.tag_priority(*t), bc))
                }
            })
            .max_by_key(|(p, _)| *p)
            .map(|(_, bc)| bc)
    }

    fn check_coverage(&self, mesh: &QuadMesh) -> Result<()> {
        let tags: BTreeSet<BoundaryTag> = mesh.boundary_edges().map(|(_, t)| t).collect();
        for tag in tags {
            if !self.velocity.contains_key(&tag) {
                return Err(Error::InvalidParameter(format!(
                    "no velocity boundary condition for {tag:?}"
                )));
            }
        }
        Ok(())
    }
}

/// State of one global value slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofState {
    /// Index into the free equation system.
    Free(usize),
    /// Index into the constraint table.
    Constrained(usize),
}

/// An eliminated value: an affine combination of free values.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Pairs of (free index, weight).
    pub masters: Vec<(usize, f64)>,
    pub inhomogeneity: f64,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    n_vertices: usize,
    /// One entry per global slot (two velocities per vertex, then one
    /// pressure per vertex).
    pub state: Vec<DofState>,
    /// Free index to global slot.
    pub free_to_slot: Vec<usize>,
    pub constraints: Vec<Constraint>,
    n_velocity: usize,
    n_pressure: usize,
    pub pin_vertex: Option<usize>,
}

impl DofMap {
    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_free(&self) -> usize {
        self.n_velocity + self.n_pressure
    }

    /// Free velocity equations; they occupy free indices `0..n_velocity()`.
    pub fn n_velocity(&self) -> usize {
        self.n_velocity
    }

    /// Free pressure equations; they occupy free indices from `n_velocity()`.
    pub fn n_pressure(&self) -> usize {
        self.n_pressure
    }

    pub fn velocity_slots(&self, vertex: usize) -> [usize; 2] {
        [2 * vertex, 2 * vertex + 1]
    }

    pub fn pressure_slot(&self, vertex: usize) -> usize {
        2 * self.n_vertices + vertex
    }

    /// Vertex owning the free pressure equation `k`.
    pub fn vertex_of_pressure_free(&self, k: usize) -> usize {
        debug_assert!(k >= self.n_velocity && k < self.n_free());
        self.free_to_slot[k] - 2 * self.n_vertices
    }

    /// Expands free values to all slots, filling in constrained values.
    pub fn expand_solution(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_free());
        let mut full = vec![0.0; 3 * self.n_vertices];
        for (slot, state) in self.state.iter().enumerate() {
            full[slot] = match state {
                DofState::Free(k) => free[*k],
                DofState::Constrained(c) => {
                    let con = &self.constraints[*c];
                    con.masters.iter().map(|&(k, w)| w * free[k]).sum::<f64>()
                        + con.inhomogeneity
                }
            };
        }
        full
    }
}

/// Raw (unresolved) affine description of a constrained slot.
struct RawConstraint {
    masters: Vec<(usize, f64)>, // (slot, weight)
    inhomogeneity: f64,
}

pub fn build_dof_map(mesh: &QuadMesh, bcs: &BoundaryConditions) -> Result<DofMap> {
    bcs.check_coverage(mesh)?;
    let nv = mesh.n_vertices();
    let pressure_base = 2 * nv;
    let mut raw: BTreeMap<usize, RawConstraint> = BTreeMap::new();

    // Dirichlet vertices.
    let vertex_tags = mesh.vertex_tag_sets();
    let mut dirichlet_vertices: BTreeSet<usize> = BTreeSet::new();
    for (&v, tags) in &vertex_tags {
        if let Some(bc) = bcs.dirichlet_for(tags) {
            let g = bc
                .value(mesh.vertices[v])
                .expect("dirichlet_for never returns a traction condition");
            raw.insert(2 * v, RawConstraint { masters: vec![], inhomogeneity: g[0] });
            raw.insert(2 * v + 1, RawConstraint { masters: vec![], inhomogeneity: g[1] });
            dirichlet_vertices.insert(v);
        }
    }

    // Hanging vertices: all three fields take the mean of the edge endpoints.
    // Dirichlet wins if both apply (hanging vertices are interior, so this
    // does not happen on conforming geometry, but stay defensive).
    for (&m, &(a, b)) in &mesh.hanging {
        for c in 0..2 {
            let slot = 2 * m + c;
            raw.entry(slot).or_insert_with(|| RawConstraint {
                masters: vec![(2 * a + c, 0.5), (2 * b + c, 0.5)],
                inhomogeneity: 0.0,
            });
        }
        raw.insert(
            pressure_base + m,
            RawConstraint {
                masters: vec![(pressure_base + a, 0.5), (pressure_base + b, 0.5)],
                inhomogeneity: 0.0,
            },
        );
    }

    // Pressure reference: pin the pressure of the lowest-index non-hanging
    // Dirichlet vertex. Such a vertex carries no free velocity, so every
    // vertex with free velocity values keeps a free pressure.
    let mut pin_vertex = None;
    if bcs.pressure_pin {
        let pin = dirichlet_vertices
            .iter()
            .copied()
            .find(|v| !mesh.hanging.contains_key(v))
            .unwrap_or(0);
        raw.insert(
            pressure_base + pin,
            RawConstraint { masters: vec![], inhomogeneity: 0.0 },
        );
        pin_vertex = Some(pin);
    }

    // Resolve chains: a master may itself be constrained (hanging vertex
    // whose edge endpoint is Dirichlet or again hanging). Constraint
    // references always point to vertices created no later, so the
    // substitution graph is acyclic.
    let mut resolved: HashMap<usize, (Vec<(usize, f64)>, f64)> = HashMap::new();
    fn resolve(
        slot: usize,
        raw: &BTreeMap<usize, RawConstraint>,
        resolved: &mut HashMap<usize, (Vec<(usize, f64)>, f64)>,
        depth: usize,
    ) -> (Vec<(usize, f64)>, f64) {
        assert!(depth < 64, "constraint chain too deep; cyclic constraints?");
        if let Some(hit) = resolved.get(&slot) {
            return hit.clone();
        }
        let out = match raw.get(&slot) {
            None => (vec![(slot, 1.0)], 0.0),
            Some(rc) => {
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                let mut inhom = rc.inhomogeneity;
                for &(master, w) in &rc.masters {
                    let (sub, sub_inhom) = resolve(master, raw, resolved, depth + 1);
                    inhom += w * sub_inhom;
                    for (s, sw) in sub {
                        *acc.entry(s).or_insert(0.0) += w * sw;
                    }
                }
                (acc.into_iter().collect(), inhom)
            }
        };
        resolved.insert(slot, out.clone());
        out
    }

    // Assign free indices in slot order: velocities first, then pressures.
    let n_slots = 3 * nv;
    let mut state = Vec::with_capacity(n_slots);
    let mut free_to_slot = Vec::new();
    let mut constrained_slots = Vec::new();
    let mut n_velocity = 0;
    for slot in 0..n_slots {
        if raw.contains_key(&slot) {
            state.push(DofState::Constrained(constrained_slots.len()));
            constrained_slots.push(slot);
        } else {
            if slot < pressure_base {
                n_velocity += 1;
            }
            state.push(DofState::Free(free_to_slot.len()));
            free_to_slot.push(slot);
        }
    }
    let n_pressure = free_to_slot.len() - n_velocity;

    let slot_free_index = |slot: usize, state: &[DofState]| -> usize {
        match state[slot] {
            DofState::Free(k) => k,
            DofState::Constrained(_) => {
                unreachable!("resolved constraint references a constrained slot")
            }
        }
    };
    let mut constraints = Vec::with_capacity(constrained_slots.len());
    for &slot in &constrained_slots {
        let (masters, inhomogeneity) = resolve(slot, &raw, &mut resolved, 0);
        let masters = masters
            .into_iter()
            .map(|(s, w)| (slot_free_index(s, &state), w))
            .collect();
        constraints.push(Constraint { masters, inhomogeneity });
    }

    Ok(DofMap {
        n_vertices: nv,
        state,
        free_to_slot,
        constraints,
        n_velocity,
        n_pressure,
        pin_vertex,
    })
}

/// Element matrices of one bilinear quad, in local slot order: the two
/// velocity components of each corner (interleaved), then four pressures.
pub struct ElementMatrices {
    /// 12 x 12, symmetric.
    pub local: [[f64; 12]; 12],
    /// Velocity load vector (8 entries).
    pub load: [f64; 8],
}

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

fn shape_ref_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ]
}

struct MappedPoint {
    grad: [[f64; 2]; 4],
    shape: [f64; 4],
    weight_jac: f64,
    position: Point,
}

fn map_point(corners: &[Point; 4], xi: f64, eta: f64, element: usize) -> Result<MappedPoint> {
    let n = shape(xi, eta);
    let dn = shape_ref_grad(xi, eta);
    let mut jac = [[0.0f64; 2]; 2];
    let mut position = [0.0, 0.0];
    for i in 0..4 {
        for r in 0..2 {
            jac[r][0] += dn[i][r] * corners[i][0];
            jac[r][1] += dn[i][r] * corners[i][1];
        }
        position[0] += n[i] * corners[i][0];
        position[1] += n[i] * corners[i][1];
    }
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    if det <= 0.0 {
        return Err(Error::DegenerateElement { element });
    }
    let inv = [
        [jac[1][1] / det, -jac[0][1] / det],
        [-jac[1][0] / det, jac[0][0] / det],
    ];
    let mut grad = [[0.0f64; 2]; 4];
    for i in 0..4 {
        grad[i][0] = inv[0][0] * dn[i][0] + inv[0][1] * dn[i][1];
        grad[i][1] = inv[1][0] * dn[i][0] + inv[1][1] * dn[i][1];
    }
    Ok(MappedPoint { grad, shape: n, weight_jac: det, position })
}

/// Integrates the element contributions of element `e`.
pub fn element_matrices(
    mesh: &QuadMesh,
    e: usize,
    params: &PhysParams,
    forcing: Option<&dyn Fn(Point) -> [f64; 2]>,
) -> Result<ElementMatrices> {
    let quad = &mesh.elements[e];
    let corners = [
        mesh.vertices[quad[0]],
        mesh.vertices[quad[1]],
        mesh.vertices[quad[2]],
        mesh.vertices[quad[3]],
    ];
    let h_sq = mesh.element_diameter_sq(e);
    let stab = params.stabilization_beta * h_sq;

    let mut a = [[0.0f64; 8]; 8];
    let mut b = [[0.0f64; 4]; 8];
    let mut c = [[0.0f64; 4]; 4];
    let mut load = [0.0f64; 8];

    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            let mp = map_point(&corners, xi, eta, e)?;
            let w = mp.weight_jac; // both Gauss weights are one
            for i in 0..4 {
                for j in 0..4 {
                    let gg = mp.grad[i][0] * mp.grad[j][0] + mp.grad[i][1] * mp.grad[j][1];
                    a[2 * i][2 * j] += params.viscosity * w * gg;
                    a[2 * i + 1][2 * j + 1] += params.viscosity * w * gg;
                    c[i][j] -= stab * w * gg;
                    for comp in 0..2 {
                        b[2 * i + comp][j] -= w * mp.grad[i][comp] * mp.shape[j];
                    }
                }
            }
            if let Some(f) = forcing {
                let fv = f(mp.position);
                for i in 0..4 {
                    load[2 * i] += w * mp.shape[i] * fv[0];
                    load[2 * i + 1] += w * mp.shape[i] * fv[1];
                }
            }
        }
    }

    // Force exact symmetry of the diagonal blocks before building the
    // element matrix; quadrature fills them symmetrically up to rounding.
    for i in 0..8 {
        for j in i + 1..8 {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            let s = 0.5 * (c[i][j] + c[j][i]);
            c[i][j] = s;
            c[j][i] = s;
        }
    }

    let mut local = [[0.0f64; 12]; 12];
    for i in 0..8 {
        for j in 0..8 {
            local[i][j] = a[i][j];
        }
        for j in 0..4 {
            local[i][8 + j] = b[i][j];
            local[8 + j][i] = b[i][j];
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            local[8 + i][8 + j] = c[i][j];
        }
    }

    Ok(ElementMatrices { local, load })
}

/// The assembled free-value system of one mesh level.
#[derive(Debug)]
pub struct SaddleSystem {
    /// Symmetric matrix over free values.
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
}

impl SaddleSystem {
    pub fn n_free(&self) -> usize {
        self.dof_map.n_free()
    }

    pub fn expand_solution(&self, free: &[f64]) -> Vec<f64> {
        self.dof_map.expand_solution(free)
    }
}

/// Assembles matrix and right-hand side over free values.
pub fn assemble_system(
    mesh: &QuadMesh,
    bcs: &BoundaryConditions,
    params: &PhysParams,
    forcing: Option<&dyn Fn(Point) -> [f64; 2]>,
) -> Result<SaddleSystem> {
    params.validate()?;
    if mesh.max_neighbor_level_diff() > 1 {
        return Err(Error::InvalidParameter(
            "mesh violates the one-level neighbor balance".into(),
        ));
    }
    let untagged = mesh.untagged_boundary_edges();
    if let Some(&(a, b)) = untagged.first() {
        return Err(Error::UntaggedBoundaryEdge { vertices: (a, b) });
    }
    let dof_map = build_dof_map(mesh, bcs)?;
    let n_free = dof_map.n_free();
    let mut rhs = vec![0.0; n_free];
    let mut upper: Vec<(usize, usize, f64)> = Vec::new();

    let expansion = |slot: usize| -> (Vec<(usize, f64)>, f64) {
        match dof_map.state[slot] {
            DofState::Free(k) => (vec![(k, 1.0)], 0.0),
            DofState::Constrained(c) => {
                let con = &dof_map.constraints[c];
                (con.masters.clone(), con.inhomogeneity)
            }
        }
    };

    for e in 0..mesh.n_elements() {
        let em = element_matrices(mesh, e, params, forcing)?;
        let quad = &mesh.elements[e];
        let mut slots = [0usize; 12];
        for k in 0..4 {
            slots[2 * k] = 2 * quad[k];
            slots[2 * k + 1] = 2 * quad[k] + 1;
            slots[8 + k] = dof_map.pressure_slot(quad[k]);
        }
        let exps: Vec<(Vec<(usize, f64)>, f64)> =
            slots.iter().map(|&s| expansion(s)).collect();

        for i in 0..12 {
            let (ref mi, _) = exps[i];
            // forcing enters through the row expansion
            if i < 8 {
                for &(ki, wi) in mi {
                    rhs[ki] += wi * em.load[i];
                }
            }
            for j in 0..12 {
                // the two velocity components never couple; skip those pairs
                // so the velocity block keeps the pattern of two scalar
                // operators (any other exact zero stays structural, because
                // the element couples all remaining values)
                if i < 8 && j < 8 && (i % 2) != (j % 2) {
                    continue;
                }
                let v = em.local[i][j];
                let (ref mj, gj) = exps[j];
                // inhomogeneous part goes to the right-hand side
                if gj != 0.0 {
                    for &(ki, wi) in mi {
                        rhs[ki] -= wi * v * gj;
                    }
                }
                // matrix entries: emit each unordered pair once
                if j < i {
                    continue;
                }
                for &(ki, wi) in mi {
                    for &(kj, wj) in mj {
                        let val = wi * wj * v;
                        if i == j {
                            if ki <= kj {
                                upper.push((ki.min(kj), ki.max(kj), val));
                            }
                        } else {
                            let val = if ki == kj { 2.0 * val } else { val };
                            upper.push((ki.min(kj), ki.max(kj), val));
                        }
                    }
                }
            }
        }
    }

    let upper_csr = CsrMatrix::from_triplets(n_free, n_free, upper);
    let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * upper_csr.nnz());
    for r in 0..n_free {
        let (cols, vals) = upper_csr.row(r);
        for (idx, &c) in cols.iter().enumerate() {
            full.push((r, c, vals[idx]));
            if c != r {
                full.push((c, r, vals[idx]));
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(n_free, n_free, full);

    Ok(SaddleSystem { matrix, rhs, dof_map })
}

/// Right-hand side only, for a prebuilt value map.
pub fn assemble_rhs(
    mesh: &QuadMesh,
    dof_map: &DofMap,
    params: &PhysParams,
    forcing: Option<&dyn Fn(Point) -> [f64; 2]>,
) -> Result<Vec<f64>> {
    let mut rhs = vec![0.0; dof_map.n_free()];
    for e in 0..mesh.n_elements() {
        let em = element_matrices(mesh, e, params, forcing)?;
        let quad = &mesh.elements[e];
        let mut slots = [0usize; 12];
        for k in 0..4 {
            slots[2 * k] = 2 * quad[k];
            slots[2 * k + 1] = 2 * quad[k] + 1;
            slots[8 + k] = dof_map.pressure_slot(quad[k]);
        }
        for i in 0..12 {
            let mi: Vec<(usize, f64)> = match dof_map.state[slots[i]] {
                DofState::Free(k) => vec![(k, 1.0)],
                DofState::Constrained(c) => dof_map.constraints[c].masters.clone(),
            };
            if i < 8 {
                for &(ki, wi) in &mi {
                    rhs[ki] += wi * em.load[i];
                }
            }
            for j in 0..12 {
                let gj = match dof_map.state[slots[j]] {
                    DofState::Free(_) => 0.0,
                    DofState::Constrained(c) => dof_map.constraints[c].inhomogeneity,
                };
                if gj != 0.0 {
                    for &(ki, wi) in &mi {
                        rhs[ki] -= wi * em.local[i][j] * gj;
                    }
                }
            }
        }
    }
    Ok(rhs)
}

const GAUSS_3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    (0.0, 0.888_888_888_888_888_9),
    (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
];

/// L2 norm of the difference between the interpolated velocity and a given
/// field, integrated with 3x3 Gauss points.
pub fn velocity_l2_error(
    mesh: &QuadMesh,
    full_solution: &[f64],
    exact: &dyn Fn(Point) -> [f64; 2],
) -> f64 {
    assert_eq!(full_solution.len(), 3 * mesh.n_vertices());
    let mut acc = 0.0;
    for e in 0..mesh.n_elements() {
        let quad = &mesh.elements[e];
        let corners = [
            mesh.vertices[quad[0]],
            mesh.vertices[quad[1]],
            mesh.vertices[quad[2]],
            mesh.vertices[quad[3]],
        ];
        for &(xi, wx) in &GAUSS_3 {
            for &(eta, wy) in &GAUSS_3 {
                let mp = map_point(&corners, xi, eta, e).expect("element orientation checked");
                let mut uh = [0.0, 0.0];
                for i in 0..4 {
                    uh[0] += mp.shape[i] * full_solution[2 * quad[i]];
                    uh[1] += mp.shape[i] * full_solution[2 * quad[i] + 1];
                }
                let ue = exact(mp.position);
                let dx = uh[0] - ue[0];
                let dy = uh[1] - ue[1];
                acc += wx * wy * mp.weight_jac * (dx * dx + dy * dy);
            }
        }
    }
    acc.sqrt()
}

/// Shifts the pressure part of an expanded solution to zero mean.
pub fn shift_pressure_to_zero_mean(mesh: &QuadMesh, full_solution: &mut [f64]) {
    assert_eq!(full_solution.len(), 3 * mesh.n_vertices());
    let base = 2 * mesh.n_vertices();
    let mut integral = 0.0;
    let mut area = 0.0;
    for e in 0..mesh.n_elements() {
        let quad = &mesh.elements[e];
        let corners = [
            mesh.vertices[quad[0]],
            mesh.vertices[quad[1]],
            mesh.vertices[quad[2]],
            mesh.vertices[quad[3]],
        ];
        for &xi in &GAUSS_2 {
            for &eta in &GAUSS_2 {
                let mp = map_point(&corners, xi, eta, e).expect("element orientation checked");
                let mut p = 0.0;
                for i in 0..4 {
                    p += mp.shape[i] * full_solution[base + quad[i]];
                }
                integral += mp.weight_jac * p;
                area += mp.weight_jac;
            }
        }
    }
    let mean = integral / area;
    for v in 0..mesh.n_vertices() {
        full_solution[base + v] -= mean;
    }
}

/// Net outflow through the boundary pieces carrying one of `tags`:
/// the integral of the normal velocity, positive outward. Exact for the
/// piecewise-linear trace of the bilinear velocity on straight edges.
pub fn boundary_flux(mesh: &QuadMesh, full_solution: &[f64], tags: &[BoundaryTag]) -> f64 {
    assert_eq!(full_solution.len(), 3 * mesh.n_vertices());
    // Directed boundary edges: each appears in exactly one element ring,
    // ordered so the domain lies to its left.
    let mut flux = 0.0;
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    for quad in &mesh.elements {
        for k in 0..4 {
            let a = quad[k];
            let b = quad[(k + 1) % 4];
            match mesh.boundary_edge_tag(a, b) {
                Some(tag) if tags.contains(&tag) => {
                    if !seen.insert((a.min(b), a.max(b))) {
                        continue;
                    }
                    let pa = mesh.vertices[a];
                    let pb = mesh.vertices[b];
                    let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                    let ua = [full_solution[2 * a], full_solution[2 * a + 1]];
                    let ub = [full_solution[2 * b], full_solution[2 * b + 1]];
                    // outward normal times edge length is (dy, -dx)
                    flux += 0.5 * ((ua[0] + ub[0]) * dy - (ua[1] + ub[1]) * dx);
                }
                _ => {}
            }
        }
    }
    flux
}
