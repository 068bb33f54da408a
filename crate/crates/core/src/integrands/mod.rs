//! Linear-growth integrands, the reference integrand `E`, and diagnostic probes.

mod family;
mod probes;
mod reference;

pub use family::{Family, Integrand, IntegrandConfig, OffsetConfig, TrigField, TrigTerm};
pub use probes::{
    check_derivatives, check_wave_cone_ellipticity, default_ladder, e_calculus_constants,
    make_shifted, measure_growth, probe_hessian_modulus, quasiconvexity_probe, recession,
    DerivativeReport, EllipticityReport, QuasiconvexityProbe, RecessionReport, ShiftReport,
    ShiftedIntegrand, FD_STEP,
};
pub use reference::{
    e_equivalence_scan, e_of_norm, e_of_sq, eval_e, eval_vp, grad_e, hess_e, modular_mean_bound,
    vp_sq_of_sq, ModularBound,
};
