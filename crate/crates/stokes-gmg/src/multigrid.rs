//! Geometric multigrid over a nested mesh hierarchy.
//!
//! Every level assembles its own operator from its mesh (no Galerkin
//! products). Prolongation is nodal interpolation expressed through vertex
//! origins: a vertex inherited from the coarse mesh copies its value, an
//! edge midpoint averages its two parents, a cell center averages the four
//! corners of its parent cell. Composed with the elimination of hanging and
//! Dirichlet values on both levels this yields a map between free-value
//! vectors; residuals travel through the transpose.
//!
//! The cycle is a plain V-cycle: pre-smooth, restrict the residual, recurse,
//! add the interpolated correction, post-smooth. The coarsest system is
//! solved by dense factorization. The outer iteration repeats cycles until
//! the residual has dropped by a configured factor, with a divergence guard
//! that aborts hopeless runs.

use std::time::Instant;

use crate::discretization::{
    assemble_system, BoundaryConditions, DofState, PhysParams, SaddleSystem,
};
use crate::error::{Error, Result};
use crate::linalg::{euclidean_norm, CsrMatrix, DenseLu};
use crate::mesh::{GridHierarchy, Point, QuadMesh, VertexProvenance};
use crate::smoothers::{SmootherConfig, VankaSmoother, WorkCounters};

/// Interpolation from the free values of a coarse level to the free values
/// of the next finer one.
pub struct TransferOperator {
    pub prolongation: CsrMatrix,
}

impl TransferOperator {
    pub fn prolongate(&self, coarse: &[f64]) -> Vec<f64> {
        self.prolongation.mul_vec(coarse)
    }

    pub fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        self.prolongation.tr_mul_vec(fine)
    }
}

/// Builds the free-to-free interpolation between two consecutive levels.
/// The fine mesh must have been produced by refining the coarse one, so
/// that its vertex origins and parent element ids refer to the coarse mesh.
pub fn build_transfer(
    coarse_mesh: &QuadMesh,
    fine_mesh: &QuadMesh,
    coarse: &SaddleSystem,
    fine: &SaddleSystem,
) -> TransferOperator {
    let n_coarse_vertices = coarse.dof_map.n_vertices();
    let nv_fine = fine.dof_map.n_vertices();
    debug_assert_eq!(nv_fine, fine_mesh.n_vertices());
    debug_assert_eq!(n_coarse_vertices, coarse_mesh.n_vertices());

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for kf in 0..fine.dof_map.n_free() {
        let slot_f = fine.dof_map.free_to_slot[kf];
        // field and vertex of the fine slot
        let (vertex_f, field) = if slot_f < 2 * nv_fine {
            (slot_f / 2, slot_f % 2)
        } else {
            (slot_f - 2 * nv_fine, 2)
        };
        // nodal weights of the fine vertex over coarse vertices
        let weights: Vec<(usize, f64)> = match fine_mesh.vertex_provenance[vertex_f] {
            VertexProvenance::Inherited => vec![(vertex_f, 1.0)],
            VertexProvenance::EdgeMidpoint(a, b) => vec![(a, 0.5), (b, 0.5)],
            VertexProvenance::CellCenter(e) => {
                coarse_mesh.elements[e].iter().map(|&u| (u, 0.25)).collect()
            }
        };
        for (u, w) in weights {
            debug_assert!(u < n_coarse_vertices, "transfer references a non-coarse vertex");
            let slot_c = if field < 2 {
                2 * u + field
            } else {
                coarse.dof_map.pressure_slot(u)
            };
            // homogeneous expansion: corrections vanish on Dirichlet values
            match coarse.dof_map.state[slot_c] {
                DofState::Free(kc) => triplets.push((kf, kc, w)),
                DofState::Constrained(c) => {
                    for &(kc, wm) in &coarse.dof_map.constraints[c].masters {
                        triplets.push((kf, kc, w * wm));
                    }
                }
            }
        }
    }
    let prolongation = CsrMatrix::from_triplets(
        fine.dof_map.n_free(),
        coarse.dof_map.n_free(),
        triplets,
    );
    TransferOperator { prolongation }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultigridConfig {
    pub n_pre: usize,
    pub n_post: usize,
    pub smoother: SmootherConfig,
    /// Relative residual reduction that counts as converged.
    pub reduction_target: f64,
    pub max_iterations: usize,
    /// Abort when the residual exceeds this multiple of the initial one.
    pub divergence_guard: f64,
}

impl MultigridConfig {
    pub fn new(smoother: SmootherConfig) -> Self {
        MultigridConfig {
            n_pre: 3,
            n_post: 3,
            smoother,
            reduction_target: 1e-8,
            max_iterations: 500,
            divergence_guard: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoother.validate()?;
        if !(self.reduction_target > 0.0 && self.reduction_target < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "reduction target must lie in (0, 1), got {}",
                self.reduction_target
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("need at least one iteration".into()));
        }
        Ok(())
    }
}

struct MgLevel {
    system: SaddleSystem,
    /// None on the coarsest level.
    smoother: Option<VankaSmoother>,
    /// Connects this level to the next coarser one; None on the coarsest.
    transfer: Option<TransferOperator>,
}

pub struct Multigrid {
    levels: Vec<MgLevel>,
    coarse_lu: DenseLu,
    config: MultigridConfig,
    pub setup_seconds: f64,
}

/// Outcome of an outer solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// The divergence guard fired (residual blew up or became non-finite).
    pub diverged: bool,
    /// Euclidean residual norms, starting with the initial residual.
    pub residual_history: Vec<f64>,
    /// Geometric mean reduction per cycle.
    pub reduction_factor: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub per_iteration_seconds: f64,
    pub counters: WorkCounters,
}

impl Multigrid {
    pub fn setup(
        hierarchy: &GridHierarchy,
        bcs: &BoundaryConditions,
        params: &PhysParams,
        config: MultigridConfig,
        forcing: Option<&dyn Fn(Point) -> [f64; 2]>,
    ) -> Result<Multigrid> {
        config.validate()?;
        let start = Instant::now();
        let n = hierarchy.n_levels();
        let mut levels: Vec<MgLevel> = Vec::with_capacity(n);
        for (l, mesh) in hierarchy.levels.iter().enumerate() {
            let is_finest = l + 1 == n;
            let system =
                assemble_system(mesh, bcs, params, if is_finest { forcing } else { None })?;
            let smoother = if l > 0 {
                Some(VankaSmoother::build(&system.matrix, &system.dof_map, config.smoother)?)
            } else {
                None
            };
            let transfer = if l > 0 {
                Some(build_transfer(
                    &hierarchy.levels[l - 1],
                    mesh,
                    &levels[l - 1].system,
                    &system,
                ))
            } else {
                None
            };
            levels.push(MgLevel { system, smoother, transfer });
        }
        let coarse_dense = levels[0].system.matrix.to_dense();
        let coarse_lu = DenseLu::factor(&coarse_dense)
            .map_err(|_| Error::SingularMatrix { context: "coarsest-level factorization" })?;
        Ok(Multigrid {
            levels,
            coarse_lu,
            config,
            setup_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest_system(&self) -> &SaddleSystem {
        &self.levels.last().unwrap().system
    }

    pub fn level_system(&self, l: usize) -> &SaddleSystem {
        &self.levels[l].system
    }

    pub fn config(&self) -> &MultigridConfig {
        &self.config
    }

    /// One V-cycle on level `l` for the system `L x = b`, updating `x`.
    fn v_cycle(&self, l: usize, b: &[f64], x: &mut [f64], counters: &mut WorkCounters) {
        if l == 0 {
            let y = self.coarse_lu.solve(b);
            x.copy_from_slice(&y);
            return;
        }
        let level = &self.levels[l];
        let matrix = &level.system.matrix;
        let smoother = level.smoother.as_ref().expect("non-coarsest level has a smoother");
        let transfer = level.transfer.as_ref().expect("non-coarsest level has a transfer");

        for _ in 0..self.config.n_pre {
            smoother.apply(matrix, b, x, counters);
        }

        let mut r = vec![0.0; matrix.n_rows()];
        matrix.residual(b, x, &mut r);
        counters.residual_flops += 2 * matrix.nnz() as u64;

        let rc = transfer.restrict(&r);
        let mut ec = vec![0.0; rc.len()];
        self.v_cycle(l - 1, &rc, &mut ec, counters);
        let ef = transfer.prolongate(&ec);
        for (xi, ei) in x.iter_mut().zip(ef.iter()) {
            *xi += ei;
        }

        for _ in 0..self.config.n_post {
            smoother.apply(matrix, b, x, counters);
        }
    }

    /// Runs V-cycles on the finest right-hand side until converged,
    /// diverged, or out of iterations.
    pub fn solve(&self) -> (Vec<f64>, SolveReport) {
        let finest = self.levels.len() - 1;
        let b = &self.levels[finest].system.rhs;
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut counters = WorkCounters::default();
        let start = Instant::now();

        let r0 = euclidean_norm(b);
        let mut history = vec![r0];
        if r0 == 0.0 {
            return (
                x,
                SolveReport {
                    iterations: 0,
                    converged: true,
                    diverged: false,
                    residual_history: history,
                    reduction_factor: 0.0,
                    setup_seconds: self.setup_seconds,
                    solve_seconds: start.elapsed().as_secs_f64(),
                    per_iteration_seconds: 0.0,
                    counters,
                },
            );
        }

        let mut converged = false;
        let mut diverged = false;
        let mut r = vec![0.0; n];
        while history.len() <= self.config.max_iterations {
            self.v_cycle(finest, b, &mut x, &mut counters);
            let matrix = &self.levels[finest].system.matrix;
            matrix.residual(b, &x, &mut r);
            counters.residual_flops += 2 * matrix.nnz() as u64;
            let rn = euclidean_norm(&r);
            history.push(rn);
            if !rn.is_finite() || rn > self.config.divergence_guard * r0 {
                diverged = true;
                break;
            }
            if rn <= self.config.reduction_target * r0 {
                converged = true;
                break;
            }
        }

        let solve_seconds = start.elapsed().as_secs_f64();
        let iterations = history.len() - 1;
        let rk = *history.last().unwrap();
        let reduction_factor = if iterations > 0 && rk > 0.0 {
            (rk / r0).powf(1.0 / iterations as f64)
        } else {
            0.0
        };
        let report = SolveReport {
            iterations,
            converged,
            diverged,
            residual_history: history,
            reduction_factor,
            setup_seconds: self.setup_seconds,
            solve_seconds,
            per_iteration_seconds: if iterations > 0 {
                solve_seconds / iterations as f64
            } else {
                0.0
            },
            counters,
        };
        (x, report)
    }
}
