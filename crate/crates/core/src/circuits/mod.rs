//! Model construction and spectral analysis.

mod ansatz;
mod feature_map;
mod model;
mod presets;
mod spectrum;

pub use ansatz::{ring_pairs, AnsatzLayer, Entangler, RotationSchedule};
pub use feature_map::{make_feature_map, EncodingBlock, FeatureMapKind, Phi};
pub use model::{
    forward, init_theta_a, AngleSource, BlockId, Circuit, LayoutItem, ModelBuilder, Op,
    QuantumModel,
};
pub use presets::{split_qubits, LayoutKind, ModelSpec};
pub use spectrum::{
    composite_eigenvalues, dft_spectrum, dft_spectrum_windowed, find_peaks, spectral_gaps,
    uniform_grid, SpectrumMode, SpectrumReport, Window, DEFAULT_GAP_TOL,
};
