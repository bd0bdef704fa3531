//! Fixed instances shared by the benchmarks.

use mcpp_core::{
    generate_instance, Mode, Profile, ProfileTable, Shape, SyntheticSpec, WorkflowGraph, WorkflowInstance,
};

/// Seeded synthetic instance with the given budget (µ$) and deadline (ms).
pub fn fixture(nodes: usize, shape: Shape, mode: Mode, budget: i64, deadline: i64) -> WorkflowInstance {
    generate_instance(&SyntheticSpec {
        nodes,
        shape,
        mode,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .expect("benchmark fixture")
    .with_constraints(budget, deadline)
}

/// Parametric instance whose costs and latencies are 1–3 units, so exact
/// solving enumerates a small `(b, h)` lattice.
pub fn lattice(graph: WorkflowGraph, budget_units: i64, deadline_units: i64) -> WorkflowInstance {
    let n = graph.len();
    let base = fixture(n, Shape::Chain, Mode::Parametric, 0, 0);
    let mut t = ProfileTable::new(n, base.n_models());
    for v in 0..n {
        for m in 0..base.n_models() {
            let p = base.profile(v, m).expect("profile").p;
            t.set(
                v,
                m,
                Profile::from_raw(
                    p,
                    (1 + (v + m) % 3) as i64 * 1_000,
                    (1 + (v * 2 + m) % 3) as i64 * 1_000,
                ),
            );
        }
    }
    WorkflowInstance::parametric(graph, base.catalog, t).with_constraints(budget_units * 1_000, deadline_units * 1_000)
}
