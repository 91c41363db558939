use nalgebra::{DMatrix, DVector};

use super::state::{idx, symmetrize, Covariance, FilterState, SENSOR_DIM, TAG_DIM};
use super::EkfError;
use crate::geometry::{boxplus, quat_exp, right_jacobian, skew, Mat3, Vec3};
use crate::models::{ImuSample, NoiseParameters};

/// Largest accepted propagation step, seconds.
pub const MAX_DT: f64 = 0.1;

/// Square matrix made of 3×3 blocks, stored by block row.
#[derive(Debug, Clone)]
pub struct BlockSparse {
    rows: Vec<Vec<(usize, Mat3)>>,
    cols: usize,
}

impl BlockSparse {
    pub fn new(block_rows: usize, block_cols: usize) -> Self {
        Self { rows: vec![Vec::new(); block_rows], cols: block_cols }
    }

    pub fn add(&mut self, i: usize, j: usize, m: Mat3) {
        assert!(j < self.cols, "block column out of range");
        match self.rows[i].iter_mut().find(|(c, _)| *c == j) {
            Some((_, e)) => *e += m,
            None => self.rows[i].push((j, m)),
        }
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Mat3> {
        self.rows[i].iter().find(|(c, _)| *c == j).map(|(_, m)| m)
    }

    /// `self · m` for a dense `m` with `3 · block_cols` rows.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), 3 * self.cols);
        let mut out = DMatrix::zeros(3 * self.rows.len(), m.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = out.fixed_rows_mut::<3>(3 * i);
            for (j, b) in row {
                acc.gemm(1.0, b, &m.fixed_rows::<3>(3 * j), 1.0);
            }
        }
        out
    }

    /// `self · diag(d) · selfᵀ`, exploiting the block sparsity.
    pub fn sandwich_diag(&self, d: &[Vec3]) -> DMatrix<f64> {
        assert_eq!(d.len(), self.cols);
        let mut by_col: Vec<Vec<(usize, Mat3)>> = vec![Vec::new(); self.cols];
        for (i, row) in self.rows.iter().enumerate() {
            for (j, b) in row {
                by_col[*j].push((i, *b));
            }
        }
        let n = 3 * self.rows.len();
        let mut out = DMatrix::zeros(n, n);
        for (j, entries) in by_col.iter().enumerate() {
            if d[j].iter().all(|v| *v == 0.0) {
                continue;
            }
            let q = Mat3::from_diagonal(&d[j]);
            for (i, gi) in entries {
                let gq = gi * q;
                for (k, gk) in entries {
                    let mut blk = out.fixed_view_mut::<3, 3>(3 * i, 3 * k);
                    blk += gq * gk.transpose();
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(3 * self.rows.len(), 3 * self.cols);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, b) in row {
                out.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(b);
            }
        }
        out
    }
}

// Noise blocks, in column order of G.
const N_F: usize = 0;
const N_W: usize = 1;
const N_BF: usize = 2;
const N_BW: usize = 3;
const N_R: usize = 4;
const N_RV: usize = 5;
const N_QV: usize = 6;
const N_SENSOR_BLOCKS: usize = 7;

/// Discrete noise variances per noise block: `Q_c · dt`.
fn noise_variances(noise: &NoiseParameters, n_tags: usize, dt: f64) -> Vec<Vec3> {
    let v = |a: [f64; 3]| Vec3::from(a) * dt;
    let mut out = vec![
        v(noise.accel),
        v(noise.gyro),
        v(noise.accel_bias),
        v(noise.gyro_bias),
        v(noise.position),
        v(noise.extrinsic_position),
        v(noise.extrinsic_rotation),
    ];
    for _ in 0..n_tags {
        out.push(v(noise.tag_position));
        out.push(v(noise.tag_rotation));
    }
    out
}

/// Intermediate quantities of one step, shared by the mean and the
/// Jacobians.
struct Step {
    dt: f64,
    phi: Vec3,
    /// `Exp(φ)ᵀ`: maps vectors from the old body frame into the new one.
    et: Mat3,
    /// `Exp(φ/2)`
    h: Mat3,
    f: Vec3,
    g_b: Vec3,
    /// Body acceleration in the old body frame.
    a: Vec3,
    /// Displacement in the old body frame.
    dp: Vec3,
    c_vb: Mat3,
}

impl Step {
    fn new(state: &FilterState, imu: &ImuSample, gravity: &Vec3, n_w: &Vec3) -> Self {
        let dt = imu.t - state.t;
        let phi = (imu.gyro - state.b_w) * dt - n_w;
        let et = quat_exp(&phi).to_rotation_matrix().into_inner().transpose();
        let h = quat_exp(&(phi * 0.5)).to_rotation_matrix().into_inner();
        let f = imu.accel - state.b_f;
        let g_b = state.q.inverse() * gravity;
        let a = h * f + g_b;
        let dp = dt * state.v + 0.5 * dt * dt * a;
        let c_vb = state.q_v.to_rotation_matrix().into_inner();
        Self { dt, phi, et, h, f, g_b, a, dp, c_vb }
    }
}

/// One step of the mean over `[state.t, imu.t]` holding the rates of `imu`:
/// the body frame turns by `Exp(ω dt)`, the specific force acts at the
/// mid-interval attitude.
///
/// `w` holds integrated process-noise increments in the column order of the
/// noise Jacobian; `None` means zero noise.
pub fn propagate_mean(
    state: &FilterState,
    imu: &ImuSample,
    gravity: &Vec3,
    w: Option<&DVector<f64>>,
) -> FilterState {
    let n = |b: usize| w.map_or(Vec3::zeros(), |w| Vec3::new(w[3 * b], w[3 * b + 1], w[3 * b + 2]));
    let st = Step::new(state, imu, gravity, &n(N_W));
    let dt = st.dt;

    let mut out = state.clone();
    out.t = imu.t;
    out.r = st.et * (state.r + st.dp) + n(N_R);
    out.v = st.et * (state.v + dt * st.a) - n(N_F);
    out.q = boxplus(&state.q, &st.phi);
    out.b_f = state.b_f + n(N_BF);
    out.b_w = state.b_w + n(N_BW);
    out.r_v = state.r_v + n(N_RV);
    out.q_v = boxplus(&state.q_v, &n(N_QV));
    for (k, (new, old)) in out.tags.values_mut().zip(state.tags.values()).enumerate() {
        let nb = N_SENSOR_BLOCKS + 2 * k;
        let s = st.c_vb.transpose() * old.r + state.r_v;
        new.r = st.c_vb * (st.et * (s - st.dp) - state.r_v) + n(nb);
        new.q = boxplus(&old.q, &(st.c_vb * (st.phi + n(nb + 1))));
    }
    out
}

/// Analytic error-state Jacobians `(F, G)` of [`propagate_mean`] at zero
/// noise.
pub fn propagation_jacobians(state: &FilterState, imu: &ImuSample, gravity: &Vec3) -> (BlockSparse, BlockSparse) {
    let st = Step::new(state, imu, gravity, &Vec3::zeros());
    let dt = st.dt;
    let nb = state.dim() / 3;
    let mut f = BlockSparse::new(nb, nb);
    let mut g = BlockSparse::new(nb, nb);
    let (et, c_vb) = (st.et, st.c_vb);
    let i3 = Mat3::identity();
    let jr = right_jacobian(&st.phi);
    let sk_g = skew(&st.g_b);
    let (r, v, q, bf, bw, rv, qv) = (
        idx::R / 3,
        idx::V / 3,
        idx::Q / 3,
        idx::BF / 3,
        idx::BW / 3,
        idx::RV / 3,
        idx::QV / 3,
    );

    // derivatives w.r.t. φ; b_w enters as -dt·dφ, the gyro noise as -dφ
    let d_a = -0.5 * st.h * skew(&st.f) * right_jacobian(&(st.phi * 0.5));
    let d_dp = 0.5 * dt * dt * d_a;
    let d_r = et * d_dp + skew(&(et * (state.r + st.dp))) * jr;
    let d_v = dt * et * d_a + skew(&(et * (state.v + dt * st.a))) * jr;

    f.add(r, r, et);
    f.add(r, v, dt * et);
    f.add(r, q, 0.5 * dt * dt * et * sk_g);
    f.add(r, bf, -0.5 * dt * dt * et * st.h);
    f.add(r, bw, -dt * d_r);
    f.add(v, v, et);
    f.add(v, q, dt * et * sk_g);
    f.add(v, bf, -dt * et * st.h);
    f.add(v, bw, -dt * d_v);
    f.add(q, q, et);
    f.add(q, bw, -dt * jr);
    for b in [bf, bw, rv, qv] {
        f.add(b, b, i3);
    }

    g.add(r, N_W, -d_r);
    g.add(r, N_R, i3);
    g.add(v, N_F, -i3);
    g.add(v, N_W, -d_v);
    g.add(q, N_W, -jr);
    g.add(bf, N_BF, i3);
    g.add(bw, N_BW, i3);
    g.add(rv, N_RV, i3);
    g.add(qv, N_QV, i3);

    for (k, tag) in state.tags.values().enumerate() {
        let tr = FilterState::tag_offset(k) / 3;
        let tq = tr + 1;
        let s1 = c_vb.transpose() * tag.r;
        let y = s1 + state.r_v - st.dp;
        let z = et * y;
        let psi = c_vb * st.phi;
        let jr_psi = right_jacobian(&psi);
        let d_t = c_vb * (-et * d_dp + skew(&z) * jr);

        f.add(tr, tr, c_vb * et * c_vb.transpose());
        f.add(tr, v, -dt * c_vb * et);
        f.add(tr, q, -0.5 * dt * dt * c_vb * et * sk_g);
        f.add(tr, bf, 0.5 * dt * dt * c_vb * et * st.h);
        f.add(tr, bw, -dt * d_t);
        f.add(tr, rv, c_vb * (et - i3));
        f.add(tr, qv, c_vb * et * skew(&s1) - c_vb * skew(&(z - state.r_v)));
        f.add(tq, tq, quat_exp(&psi).to_rotation_matrix().into_inner().transpose());
        f.add(tq, bw, -dt * jr_psi * c_vb);
        f.add(tq, qv, -jr_psi * c_vb * skew(&st.phi));

        let nt = N_SENSOR_BLOCKS + 2 * k;
        g.add(tr, N_W, -d_t);
        g.add(tr, nt, i3);
        g.add(tq, N_W, -jr_psi * c_vb);
        g.add(tq, nt + 1, jr_psi * c_vb);
    }
    debug_assert_eq!(SENSOR_DIM + TAG_DIM * state.tags.len(), 3 * nb);
    (f, g)
}

/// One step of mean and covariance to `imu.t`, holding the rates of `imu`
/// over the interval.
pub fn propagate(
    state: &mut FilterState,
    cov: &mut Covariance,
    imu: &ImuSample,
    noise: &NoiseParameters,
) -> Result<(), EkfError> {
    let dt = imu.t - state.t;
    if dt < 0.0 {
        return Err(EkfError::NonMonotonicTime { t: imu.t, state_t: state.t });
    }
    if dt > MAX_DT {
        return Err(EkfError::ExcessiveDt(dt));
    }
    let gravity = noise.gravity_vector();
    let (f, g) = propagation_jacobians(state, imu, &gravity);
    let fp = f.mul_dense(cov);
    let mut p = f.mul_dense(&fp.transpose()).transpose();
    p += g.sandwich_diag(&noise_variances(noise, state.tags.len(), dt));
    symmetrize(&mut p);
    *state = propagate_mean(state, imu, &gravity, None);
    *cov = p;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekf::state::TagPose;
    use crate::ekf::is_psd;
    use crate::geometry::{boxminus, rotation_angle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn random_config(rng: &mut ChaCha8Rng, n_tags: usize) -> (FilterState, ImuSample) {
        let mut s = FilterState::new(1.0);
        s.r = random_vec(rng, 2.0);
        s.v = random_vec(rng, 1.0);
        s.q = quat_exp(&random_vec(rng, 2.0));
        s.b_f = random_vec(rng, 0.2);
        s.b_w = random_vec(rng, 0.05);
        s.r_v = random_vec(rng, 0.1);
        s.q_v = quat_exp(&random_vec(rng, 2.0));
        for id in 0..n_tags {
            s.tags.insert(
                id as u32,
                TagPose { r: random_vec(rng, 1.5) + Vec3::new(0.0, 0.0, 2.0), q: quat_exp(&random_vec(rng, 2.0)) },
            );
        }
        let dt = rng.random_range(0.001..0.05);
        let imu = ImuSample::new(s.t + dt, random_vec(rng, 3.0), random_vec(rng, 12.0));
        (s, imu)
    }

    /// Column-wise relative error between two Jacobians.
    fn column_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (0..a.ncols())
            .map(|j| (a.column(j) - b.column(j)).norm() / b.column(j).norm().max(1e-3))
            .fold(0.0, f64::max)
    }

    fn numeric_jacobians(s: &FilterState, imu: &ImuSample, g: &Vec3) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = 1e-6;
        let n = s.dim();
        let base = propagate_mean(s, imu, g, None);
        let mut fnum = DMatrix::zeros(n, n);
        let mut gnum = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = h;
            let mut sp = s.clone();
            sp.apply_correction(&e);
            let mut sm = s.clone();
            sm.apply_correction(&(-&e));
            let d = propagate_mean(&sp, imu, g, None).difference(&base)
                - propagate_mean(&sm, imu, g, None).difference(&base);
            fnum.set_column(j, &(d / (2.0 * h)));
            let d = propagate_mean(s, imu, g, Some(&e)).difference(&base)
                - propagate_mean(s, imu, g, Some(&(-&e))).difference(&base);
            gnum.set_column(j, &(d / (2.0 * h)));
        }
        (fnum, gnum)
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Vec3::new(0.0, 0.0, -9.81);
        for trial in 0..60 {
            let (s, imu) = random_config(&mut rng, trial % 4);
            let (f, gm) = propagation_jacobians(&s, &imu, &g);
            let (fnum, gnum) = numeric_jacobians(&s, &imu, &g);
            let ef = column_error(&f.to_dense(), &fnum);
            let eg = column_error(&gm.to_dense(), &gnum);
            assert!(ef < 1e-4, "F error {ef} in trial {trial}");
            assert!(eg < 1e-4, "G error {eg} in trial {trial}");
        }
    }

    #[test]
    fn structured_covariance_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = NoiseParameters {
            extrinsic_position: [1e-6; 3],
            extrinsic_rotation: [1e-6; 3],
            ..Default::default()
        };
        for n_tags in 0..4 {
            let (mut s, imu) = random_config(&mut rng, n_tags);
            let n = s.dim();
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let mut p = &a * a.transpose() + DMatrix::identity(n, n);
            let p0 = p.clone();
            let dt = imu.t - s.t;
            let (f, g) = propagation_jacobians(&s, &imu, &noise.gravity_vector());
            let (f, g) = (f.to_dense(), g.to_dense());
            let qd: Vec<f64> = noise_variances(&noise, n_tags, dt).iter().flat_map(|v| v.iter().copied()).collect();
            let expected = &f * &p0 * f.transpose() + &g * DMatrix::from_diagonal(&DVector::from_vec(qd)) * g.transpose();
            propagate(&mut s, &mut p, &imu, &noise).unwrap();
            assert!((p - expected).amax() < 1e-9);
        }
    }

    #[test]
    fn stationary_state_is_unchanged() {
        let mut s = FilterState::new(0.0);
        s.q = quat_exp(&Vec3::new(0.3, -0.2, 1.0));
        s.tags.insert(1, TagPose { r: Vec3::new(0.1, 0.2, 1.0), q: quat_exp(&Vec3::new(0.2, 0.0, 0.0)) });
        let noise = NoiseParameters::default();
        let f = -(s.q.inverse() * noise.gravity_vector());
        let mut p = Covariance::identity(s.dim(), s.dim()) * 1e-4;
        let start = s.clone();
        for k in 1..=200 {
            propagate(&mut s, &mut p, &ImuSample::new(k as f64 * 0.005, Vec3::zeros(), f), &noise).unwrap();
        }
        assert!(s.difference(&start).amax() < 1e-12);
        assert!(is_psd(&p));
    }

    #[test]
    fn pure_rotation_matches_closed_form() {
        let mut s = FilterState::new(0.0);
        let noise = NoiseParameters::default();
        let mut p = Covariance::identity(21, 21) * 1e-4;
        let f = -(noise.gravity_vector());
        for k in 1..=200 {
            let imu = ImuSample::new(k as f64 / 200.0, Vec3::new(0.0, 0.0, 1.0), s.q.inverse() * f);
            propagate(&mut s, &mut p, &imu, &noise).unwrap();
        }
        let expected = quat_exp(&Vec3::new(0.0, 0.0, 1.0));
        assert!(rotation_angle(&(expected.inverse() * s.q)) < 1e-9);
        assert!(boxminus(&s.q, &expected).norm() < 1e-9);
    }

    #[test]
    fn time_errors() {
        let mut s = FilterState::new(1.0);
        let mut p = Covariance::identity(21, 21);
        let noise = NoiseParameters::default();
        assert!(matches!(
            propagate(&mut s, &mut p, &ImuSample::new(0.5, Vec3::zeros(), Vec3::zeros()), &noise),
            Err(EkfError::NonMonotonicTime { .. })
        ));
        assert!(matches!(
            propagate(&mut s, &mut p, &ImuSample::new(1.2, Vec3::zeros(), Vec3::zeros()), &noise),
            Err(EkfError::ExcessiveDt(_))
        ));
        assert_eq!(s.t, 1.0);
    }

    #[test]
    fn dead_reckoning_position_uncertainty_grows() {
        let mut s = FilterState::new(0.0);
        let noise = NoiseParameters::default();
        let mut p = Covariance::identity(21, 21) * 1e-6;
        let mut last = 0.0;
        for k in 1..=400 {
            let imu = ImuSample::new(k as f64 * 0.005, Vec3::new(0.1, 0.0, 0.2), Vec3::new(0.0, 0.0, 9.81));
            propagate(&mut s, &mut p, &imu, &noise).unwrap();
            let tr = p.view((0, 0), (3, 3)).trace();
            assert!(tr >= last);
            last = tr;
        }
    }
}
