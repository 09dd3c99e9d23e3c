//! Small planar structures used for examples and end-to-end checks.

use crate::model::{MatrixSpec, ModelSpec, ProblemSpec, VectorSpec};
use crate::codesign::Architecture;
use crate::statespace::DescriptorOptions;
use crate::topology::TopologySpec;

/// Two crossed bars pinned at the base, tied by three strings.
///
/// ```text
///  3 ---- 2
///  | \  / |
///  |  \/  |
///  |  /\  |
///  0      1      (0 and 1 pinned)
/// ```
pub fn arm() -> ModelSpec {
    ModelSpec {
        name: "desk-arm".into(),
        topology: TopologySpec {
            dimension: 2,
            node_count: 4,
            bars: vec![[0, 2], [1, 3]],
            strings: vec![[1, 2], [2, 3], [3, 0]],
            point_mass_nodes: vec![],
        },
        nodes: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]],
        fixed_nodes: vec![0, 1],
        bar_masses: VectorSpec::Scalar(1.0),
        bar_inertias: None,
        point_masses: VectorSpec::Scalar(1.0),
        string_stiffness: VectorSpec::Scalar(100.0),
        string_damping: VectorSpec::Scalar(0.0),
        prestress: VectorSpec::Scalar(1.0),
        loads: None,
        prestress_basis: None,
        descriptor: DescriptorOptions {
            output_nodes: vec![2],
            measured_nodes: vec![2, 3],
            measure_velocity: false,
            disturbance_nodes: vec![2, 3],
        },
    }
}

/// Two-bay planar beam with class-2 joints at nodes 1 and 4, pinned at
/// the left end.
///
/// ```text
///  3 --- 4 --- 5
///  |  X  |  X  |
///  0 --- 1 --- 2
/// ```
///
/// Strings are `[34, 45, 01, 12, 14, 25]`; the two prestress modes load
/// the left bay and the right bay with the shared vertical `14`.
pub fn beam() -> ModelSpec {
    ModelSpec {
        name: "desk-beam".into(),
        topology: TopologySpec {
            dimension: 2,
            node_count: 6,
            bars: vec![[0, 4], [1, 3], [1, 5], [2, 4]],
            strings: vec![[3, 4], [4, 5], [0, 1], [1, 2], [1, 4], [2, 5]],
            point_mass_nodes: vec![],
        },
        nodes: vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0, 1.0],
        ],
        fixed_nodes: vec![0, 3],
        bar_masses: VectorSpec::Scalar(1.0),
        bar_inertias: None,
        point_masses: VectorSpec::Scalar(1.0),
        string_stiffness: VectorSpec::Scalar(100.0),
        string_damping: VectorSpec::Scalar(0.0),
        prestress: VectorSpec::Values(vec![1.0, 1.0, 1.0, 1.0, 2.0, 1.0]),
        loads: None,
        prestress_basis: Some(vec![vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0]]),
        descriptor: DescriptorOptions {
            output_nodes: vec![5],
            measured_nodes: vec![2, 5],
            measure_velocity: false,
            disturbance_nodes: vec![2, 5],
        },
    }
}

/// A single bar hinged at the origin and held upright by two strings to
/// fixed anchors: one rotational mode, two states.
pub fn hinged_bar() -> ModelSpec {
    ModelSpec {
        name: "desk-hinged-bar".into(),
        topology: TopologySpec {
            dimension: 2,
            node_count: 4,
            bars: vec![[0, 1]],
            strings: vec![[1, 2], [1, 3]],
            point_mass_nodes: vec![2, 3],
        },
        nodes: vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.5], vec![1.0, 0.5]],
        fixed_nodes: vec![0, 2, 3],
        bar_masses: VectorSpec::Scalar(1.0),
        bar_inertias: None,
        point_masses: VectorSpec::Scalar(1.0),
        string_stiffness: VectorSpec::Scalar(100.0),
        string_damping: VectorSpec::Scalar(0.0),
        prestress: VectorSpec::Scalar(1.0),
        loads: None,
        prestress_basis: None,
        descriptor: DescriptorOptions {
            output_nodes: vec![1],
            measured_nodes: vec![1],
            measure_velocity: true,
            disturbance_nodes: vec![1],
        },
    }
}

/// Process noise `0.01 I` at the free end, output bound `0.02 I`, input bound `1.2 I`, unit instrument prices and
/// `10` per unit prestress parameter.
pub fn beam_problem() -> ProblemSpec {
    ProblemSpec {
        architecture: Architecture::OutputFeedback,
        w_p: MatrixSpec::Scalar(0.01),
        y_bar: MatrixSpec::Scalar(0.02),
        u_bar: MatrixSpec::Scalar(1.2),
        budget: 1e6,
        gamma_a_cap: VectorSpec::Scalar(1e4),
        gamma_s_cap: VectorSpec::Scalar(1e4),
        alpha_lower: VectorSpec::Scalar(0.5),
        alpha_upper: VectorSpec::Scalar(20.0),
        price_actuator: VectorSpec::Scalar(1.0),
        price_sensor: VectorSpec::Scalar(1.0),
        price_alpha: VectorSpec::Scalar(10.0),
        fixed_alpha: None,
        fixed_precisions: false,
        max_iterations: None,
        convergence: None,
        margin: None,
    }
}

/// The beam problem with the prestress box narrowed to `[0.5, 5]`, sized for [`arm`].
pub fn arm_problem() -> ProblemSpec {
    ProblemSpec { alpha_lower: VectorSpec::Scalar(0.5), alpha_upper: VectorSpec::Scalar(5.0), ..beam_problem() }
}
