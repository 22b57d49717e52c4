use sns_core::noise::{sample_zeta_path, AdditiveNoiseSpec, Purpose, RngStream};
use sns_core::spectral::{lp_norm, SpectralField, TorusGrid};

/// Keeps the modes of `fine` that the coarse grid resolves, Nyquist excluded.
/// Mode draws are independent, so this has the law of the coarse `ζ`.
fn restrict(fine: &SpectralField, coarse: &TorusGrid) -> SpectralField {
    let mut out = SpectralField::zeros(coarse);
    for idx in 0..coarse.len() {
        if coarse.is_nyquist(idx) {
            continue;
        }
        let (k1, k2) = coarse.mode(idx);
        out.coeffs_mut()[idx] = fine.coeff(k1, k2).expect("coarse mode on fine grid");
    }
    out
}

#[test]
fn sup_lp_moment_of_zeta_is_stable_under_refinement() {
    let spec = AdditiveNoiseSpec::new(1.0).unwrap();
    let (coarse, fine) = (
        TorusGrid::two_thirds(16).unwrap(),
        TorusGrid::two_thirds(32).unwrap(),
    );
    let (p, dt, steps, samples) = (4.0, 0.01, 50, 200);
    let (mut m_coarse, mut m_fine) = (0.0, 0.0);
    for s in 0..samples {
        let mut rng = RngStream::new(77, s, Purpose::AdditiveNoise);
        let path = sample_zeta_path(&fine, &spec, dt, steps, &mut rng).unwrap();
        let (mut sup_c, mut sup_f) = (0.0f64, 0.0f64);
        for z in &path {
            sup_f = sup_f.max(lp_norm(&z.to_real(), p));
            sup_c = sup_c.max(lp_norm(&restrict(z, &coarse).to_real(), p));
        }
        m_coarse += sup_c.powf(p) / samples as f64;
        m_fine += sup_f.powf(p) / samples as f64;
    }
    assert!(m_coarse.is_finite() && m_fine > 0.0);
    assert!(
        (m_fine - m_coarse).abs() / m_fine < 0.1,
        "{m_coarse} vs {m_fine}"
    );
}
