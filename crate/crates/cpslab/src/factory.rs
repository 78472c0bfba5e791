//! Coprime factors, the Bezout identity, Youla controllers, the input/output
//! residual bijection and mode re-parameterization.

use crate::error::{Error, Result};
use crate::sscore::{
    self, add, concat_inputs, freq_grid, invert_io, linalg, series_connect, stack_outputs, sub,
    Mat, Signal, StateSpace,
};

/// Feedback gain `F`, observer gain `L` and the invertible weights `W`, `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGains {
    pub f: Mat,
    pub l: Mat,
    pub w: Mat,
    pub v: Mat,
}

impl FactorGains {
    /// Gains with `W = I` and `V = I`.
    pub fn new(f: Mat, l: Mat) -> Self {
        let (m, p) = (f.nrows(), l.ncols());
        FactorGains {
            f,
            l,
            w: Mat::identity(p, p),
            v: Mat::identity(m, m),
        }
    }

    pub fn validate(&self, model: &StateSpace) -> Result<()> {
        let (n, m, p) = (model.n(), model.m(), model.p());
        if self.f.shape() != (m, n) || self.l.shape() != (n, p) {
            return Err(Error::dim(format!("F must be {m}x{n} and L must be {n}x{p}")));
        }
        if self.w.shape() != (p, p) || self.v.shape() != (m, m) {
            return Err(Error::dim(format!("W must be {p}x{p} and V must be {m}x{m}")));
        }
        for (name, g) in [("W", &self.w), ("V", &self.v)] {
            let cond = linalg::condition_number(g);
            if !(cond < 1e8) {
                return Err(Error::invalid(format!("{name} is not safely invertible (condition {cond:e})")));
            }
        }
        let af = model.a() + model.b() * &self.f;
        if !sscore::is_schur(&af) {
            return Err(Error::invalid(format!(
                "A + BF is not Schur (spectral radius {})",
                linalg::spectral_radius(&af)?
            )));
        }
        let al = model.a() - &self.l * model.c();
        if !sscore::is_schur(&al) {
            return Err(Error::invalid(format!(
                "A - LC is not Schur (spectral radius {})",
                linalg::spectral_radius(&al)?
            )));
        }
        Ok(())
    }
}

/// The eight factor systems of the Bezout identity with their generating gains.
#[derive(Clone, Debug)]
pub struct BezoutFactors {
    pub m: StateSpace,
    pub n: StateSpace,
    pub m_hat: StateSpace,
    pub n_hat: StateSpace,
    pub x: StateSpace,
    pub y: StateSpace,
    pub x_hat: StateSpace,
    pub y_hat: StateSpace,
    pub gains: FactorGains,
    pub model: StateSpace,
}

/// Realizations of `M, N, M^, N^, X, Y, X^, Y^` for the given gains.
pub fn build_bezout_factors(model: &StateSpace, gains: &FactorGains) -> Result<BezoutFactors> {
    gains.validate(model)?;
    let (a, b, c, d, ts) = (model.a(), model.b(), model.c(), model.d(), model.ts());
    let FactorGains { f, l, w, v } = gains;
    let winv = linalg::inverse(w, "W")?;
    let af = a + b * f;
    let al = a - l * c;
    let cdf = c + d * f;
    let bld = b - l * d;
    let m_in = c.nrows();
    let m_u = b.ncols();
    let ss = |a: &Mat, b: Mat, c: Mat, d: Mat| StateSpace::new(a.clone(), b, c, d, ts);
    Ok(BezoutFactors {
        m_hat: ss(&al, -l, w * c, w.clone())?,
        n_hat: ss(&al, bld.clone(), w * c, w * d)?,
        m: ss(&af, b * v, f.clone(), v.clone())?,
        n: ss(&af, b * v, cdf.clone(), d * v)?,
        x_hat: ss(&af, l.clone(), cdf, winv.clone())?,
        y_hat: ss(&af, -(l * &winv), f.clone(), Mat::zeros(m_u, m_in))?,
        x: ss(&al, -bld, f.clone(), Mat::identity(m_u, m_u))?,
        y: ss(&al, -l, f.clone(), Mat::zeros(m_u, m_in))?,
        gains: gains.clone(),
        model: model.clone(),
    })
}

impl BezoutFactors {
    /// `[X Y; -N^ M^]`.
    pub fn left_block(&self) -> Result<StateSpace> {
        let top = concat_inputs(&self.x, &self.y)?;
        let bottom = concat_inputs(&self.n_hat.neg(), &self.m_hat)?;
        stack_outputs(&top, &bottom)
    }

    /// `[M -Y^; N X^]`.
    pub fn right_block(&self) -> Result<StateSpace> {
        let left = stack_outputs(&self.m, &self.n)?;
        let right = stack_outputs(&self.y_hat.neg(), &self.x_hat)?;
        concat_inputs(&left, &right)
    }

    /// `[M; N]`, the image of the plant.
    pub fn plant_image(&self) -> Result<StateSpace> {
        stack_outputs(&self.m, &self.n)
    }

    /// `[-Y^; X^]`, the image of the nominal controller.
    pub fn controller_image(&self) -> Result<StateSpace> {
        stack_outputs(&self.y_hat.neg(), &self.x_hat)
    }

    /// `[-N^ M^]`, the output residual generator acting on `[u; y]`.
    pub fn output_residual_generator(&self) -> Result<StateSpace> {
        concat_inputs(&self.n_hat.neg(), &self.m_hat)
    }
}

/// Maximum over a logarithmic grid of `|[X Y; -N^ M^][M -Y^; N X^] - I|_F`.
pub fn verify_bezout(factors: &BezoutFactors, grid_size: usize) -> Result<f64> {
    let left = factors.left_block()?;
    let right = factors.right_block()?;
    let k = left.m();
    let grid = freq_grid(factors.model.ts(), grid_size);
    let eye = linalg::to_complex(&Mat::identity(k, k));
    let mut worst = 0.0f64;
    for w in grid {
        let prod = left.freq_response(w)? * right.freq_response(w)?;
        worst = worst.max((prod - &eye).norm());
    }
    Ok(worst)
}

/// Stable Youla parameter `Q` (m x p).
#[derive(Clone, Debug)]
pub struct YoulaParam {
    q: StateSpace,
}

impl YoulaParam {
    pub fn new(q: StateSpace) -> Result<Self> {
        if !q.is_stable()? {
            return Err(Error::invalid("Youla parameter must be stable"));
        }
        Ok(YoulaParam { q })
    }

    pub fn zero(m: usize, p: usize, ts: f64) -> Self {
        YoulaParam {
            q: StateSpace::zeros(m, p, ts),
        }
    }

    pub fn system(&self) -> &StateSpace {
        &self.q
    }
}

fn check_q(factors: &BezoutFactors, q: &YoulaParam) -> Result<()> {
    let (m, p) = (factors.model.m(), factors.model.p());
    if q.q.p() != m || q.q.m() != p {
        return Err(Error::dim(format!("Youla parameter must be {m}x{p}")));
    }
    Ok(())
}

/// Controller `K = -(X + Q N^)^{-1} (Y - Q M^)`, so that `u = K y`.
pub fn youla_controller(factors: &BezoutFactors, q: &YoulaParam) -> Result<StateSpace> {
    check_q(factors, q)?;
    let lhs = add(&factors.x, &series_connect(&factors.n_hat, &q.q)?)?;
    let rhs = sub(&factors.y, &series_connect(&factors.m_hat, &q.q)?)?;
    Ok(series_connect(&rhs, &invert_io(&lhs)?)?.neg())
}

/// Controller `K = -(Y^ - M Q)(X^ + N Q)^{-1}`, the other coprime form.
pub fn youla_controller_right(factors: &BezoutFactors, q: &YoulaParam) -> Result<StateSpace> {
    check_q(factors, q)?;
    let num = sub(&factors.y_hat, &series_connect(&q.q, &factors.m)?)?;
    let den = add(&factors.x_hat, &series_connect(&q.q, &factors.n)?)?;
    Ok(series_connect(&invert_io(&den)?, &num)?.neg())
}

/// State matrix of the loop `u = K y` closed around `plant`, state `[x; x_K]`.
pub fn closed_loop_a(plant: &StateSpace, controller: &StateSpace) -> Result<Mat> {
    if controller.m() != plant.p() || controller.p() != plant.m() {
        return Err(Error::dim("controller dimensions do not match the plant"));
    }
    let (n, nk, m) = (plant.n(), controller.n(), plant.m());
    let (a, b, c, d) = (plant.a(), plant.b(), plant.c(), plant.d());
    let (ak, bk, ck, dk) = (controller.a(), controller.b(), controller.c(), controller.d());
    let e = linalg::inverse(&(Mat::identity(m, m) - dk * d), "I - D_K D")?;
    // u = E (D_K C x + C_K x_K)
    let ux = &e * dk * c;
    let uk = &e * ck;
    let yx = c + d * &ux;
    let yk = d * &uk;
    let a11 = a + b * &ux;
    let a12 = b * &uk;
    let a21 = bk * &yx;
    let a22 = ak + bk * &yk;
    Ok(linalg::blocks(
        &[n, nk],
        &[n, nk],
        &[&[Some(&a11), Some(&a12)], &[Some(&a21), Some(&a22)]],
    ))
}

/// `[r_u; r_y] = [X + Q N^, Y - Q M^; -N^, M^] [u; y]`.
pub fn residual_generator(factors: &BezoutFactors, q: &YoulaParam) -> Result<StateSpace> {
    check_q(factors, q)?;
    let xq = add(&factors.x, &series_connect(&factors.n_hat, &q.q)?)?;
    let yq = sub(&factors.y, &series_connect(&factors.m_hat, &q.q)?)?;
    let top = concat_inputs(&xq, &yq)?;
    stack_outputs(&top, &factors.output_residual_generator()?)
}

/// `[u; y] = [M; N] r_u + [-Y^ + M Q; X^ + N Q] r_y`.
pub fn io_generator(factors: &BezoutFactors, q: &YoulaParam) -> Result<StateSpace> {
    check_q(factors, q)?;
    let upper = sub(&series_connect(&q.q, &factors.m)?, &factors.y_hat)?;
    let lower = add(&factors.x_hat, &series_connect(&q.q, &factors.n)?)?;
    concat_inputs(&factors.plant_image()?, &stack_outputs(&upper, &lower)?)
}

fn check_aligned(a: &Signal, b: &Signal) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "signals are not aligned: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if (a.ts() - b.ts()).abs() > 1e-12 * a.ts() {
        return Err(Error::dim("signals have different sample periods"));
    }
    Ok(())
}

/// Input and output residuals `(r_u, r_y)` of an I/O record, from zero filter states.
pub fn residuals_from_io(
    factors: &BezoutFactors,
    q: &YoulaParam,
    u: &Signal,
    y: &Signal,
) -> Result<(Signal, Signal)> {
    check_aligned(u, y)?;
    let m = factors.model.m();
    let p = factors.model.p();
    let out = u.stack(y)?.filter(&residual_generator(factors, q)?)?;
    Ok((out.rows(0, m), out.rows(m, p)))
}

/// I/O record `(u, y)` generated by residuals `(r_u, r_y)`, from zero filter states.
pub fn io_from_residuals(
    factors: &BezoutFactors,
    q: &YoulaParam,
    r_u: &Signal,
    r_y: &Signal,
) -> Result<(Signal, Signal)> {
    check_aligned(r_u, r_y)?;
    let m = factors.model.m();
    let p = factors.model.p();
    let out = r_u.stack(r_y)?.filter(&io_generator(factors, q)?)?;
    Ok((out.rows(0, m), out.rows(m, p)))
}

/// Alternative modes `(F_i, L_i)` and a piecewise-constant schedule.
#[derive(Clone, Debug)]
pub struct ModeSet {
    modes: Vec<(Mat, Mat)>,
    /// `(first step, mode index)` pairs sorted by step; mode 0 applies before the first entry.
    schedule: Vec<(usize, usize)>,
}

impl ModeSet {
    pub fn new(
        model: &StateSpace,
        modes: Vec<(Mat, Mat)>,
        mut schedule: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("mode set must contain at least one mode"));
        }
        for (i, (f, l)) in modes.iter().enumerate() {
            FactorGains::new(f.clone(), l.clone())
                .validate(model)
                .map_err(|e| Error::invalid(format!("mode {i}: {e}")))?;
        }
        schedule.sort_by_key(|&(k, _)| k);
        if let Some(&(_, bad)) = schedule.iter().find(|&&(_, i)| i >= modes.len()) {
            return Err(Error::invalid(format!(
                "schedule refers to mode {bad}, only {} defined",
                modes.len()
            )));
        }
        Ok(ModeSet { modes, schedule })
    }

    pub fn modes(&self) -> &[(Mat, Mat)] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mode active at step `k`.
    pub fn mode_at(&self, k: usize) -> usize {
        self.schedule
            .iter()
            .take_while(|&&(start, _)| start <= k)
            .last()
            .map_or(0, |&(_, i)| i)
    }
}

/// Compensators that make a plant running mode gains `(F_i, L_i)` look like the base mode.
#[derive(Clone, Debug)]
pub struct ModeCompensators {
    /// `I + (F_i - F)(zI - A - BF_i)^{-1} B`: maps `r_{u,i}` into `r_u`.
    pub v_i0: StateSpace,
    /// `I + (F - F_i)(zI - A - BF)^{-1} B`, the inverse of `v_i0`.
    pub v_0i: StateSpace,
    /// `[X Y][-Y^_i; X^_i]`: contribution of `r_{y,i}` to `r_u`.
    pub v_bar_i0: StateSpace,
    /// `I + C(zI - A + L_i C)^{-1}(L - L_i)`: maps `r_y` into `r_{y,i}`.
    pub r_i0: StateSpace,
    /// `I - C(zI - A + LC)^{-1}(L - L_i)`, the inverse of `r_i0`.
    pub r_0i: StateSpace,
    /// `[X_i Y_i][-Y^; X^]`.
    pub r_bar_i0: StateSpace,
    /// `R_bar_i0 R_0i`, the feedforward of `r_{y,i}` in the mode control law.
    pub q_i: StateSpace,
    /// Weight on `r_{u,i}` in the I/O reconstruction.
    pub q_u: StateSpace,
    /// Youla weight on the base output residual in the I/O reconstruction, `V_bar_i0 R_i0`.
    pub q_e: StateSpace,
    pub factors: BezoutFactors,
}

/// Compensators for running mode `(F_i, L_i)` in place of the base gains.
pub fn reparameterize_mode(base: &BezoutFactors, f_i: &Mat, l_i: &Mat) -> Result<ModeCompensators> {
    let model = &base.model;
    let gi = FactorGains::new(f_i.clone(), l_i.clone());
    let fi = build_bezout_factors(model, &gi)?;
    let (a, b, c, ts) = (model.a(), model.b(), model.c(), model.ts());
    let (f, l) = (&base.gains.f, &base.gains.l);
    let (m, p) = (model.m(), model.p());
    let v_i0 = StateSpace::new(a + b * f_i, b.clone(), f_i - f, Mat::identity(m, m), ts)?;
    let v_0i = StateSpace::new(a + b * f, b.clone(), f - f_i, Mat::identity(m, m), ts)?;
    let r_i0 = StateSpace::new(a - l_i * c, l - l_i, c.clone(), Mat::identity(p, p), ts)?;
    let r_0i = StateSpace::new(a - l * c, -(l - l_i), c.clone(), Mat::identity(p, p), ts)?;
    let xy = concat_inputs(&base.x, &base.y)?;
    let v_bar_i0 = series_connect(&fi.controller_image()?, &xy)?;
    let xy_i = concat_inputs(&fi.x, &fi.y)?;
    let r_bar_i0 = series_connect(&base.controller_image()?, &xy_i)?;
    let q_i = series_connect(&r_0i, &r_bar_i0)?;
    let q_e = series_connect(&r_i0, &v_bar_i0)?;
    Ok(ModeCompensators {
        q_u: v_i0.clone(),
        v_i0,
        v_0i,
        v_bar_i0,
        r_i0,
        r_0i,
        r_bar_i0,
        q_i,
        q_e,
        factors: fi,
    })
}

/// `(u, y)` from mode residuals `(r_{u,i}, r_{y,i})` in the base frame:
/// `[M; N] (V_i0 r_{u,i} + V_bar_i0 r_{y,i}) + [-Y^; X^] R_0i r_{y,i}`.
pub fn io_from_mode_residuals(
    base: &BezoutFactors,
    comps: &ModeCompensators,
    r_ui: &Signal,
    r_yi: &Signal,
) -> Result<(Signal, Signal)> {
    check_aligned(r_ui, r_yi)?;
    let to_ru = concat_inputs(&comps.v_i0, &comps.v_bar_i0)?;
    let to_ry = concat_inputs(&StateSpace::zeros(base.model.p(), base.model.m(), base.model.ts()), &comps.r_0i)?;
    let base_res = stack_outputs(&to_ru, &to_ry)?;
    let gen = series_connect(&base_res, &io_generator(base, &YoulaParam::zero(base.model.m(), base.model.p(), base.model.ts()))?)?;
    let out = r_ui.stack(r_yi)?.filter(&gen)?;
    let m = base.model.m();
    Ok((out.rows(0, m), out.rows(m, base.model.p())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sscore::{max_grid_deviation, max_grid_distance_to, Vector, GRID_POINTS};
    use proptest::prelude::*;

    fn rows(r: &[&[f64]]) -> Mat {
        let v: Vec<Vec<f64>> = r.iter().map(|x| x.to_vec()).collect();
        linalg::mat_from_rows(&v).unwrap()
    }

    pub(crate) fn demo_plant() -> StateSpace {
        StateSpace::new(
            rows(&[&[0.9, 0.2, 0.0], &[0.0, 0.8, 0.1], &[0.1, 0.0, 1.05]]),
            rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.2]]),
            rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]]),
            rows(&[&[0.0, 0.1], &[0.0, 0.0]]),
            0.1,
        )
        .unwrap()
    }

    fn demo_gains(g: &StateSpace) -> FactorGains {
        let f = sscore::lq_gain(g, &Mat::identity(3, 3), &Mat::identity(2, 2)).unwrap().gain;
        let noise = sscore::NoiseSpec::isotropic(3, 2, 1.0, 1.0).unwrap();
        let l = sscore::kalman_gain(g, &noise).unwrap().gain;
        FactorGains::new(f, l)
    }

    #[test]
    fn trivial_gains_read_off() {
        let g = StateSpace::new(rows(&[&[0.5]]), rows(&[&[1.0]]), rows(&[&[2.0]]), rows(&[&[0.0]]), 0.1).unwrap();
        let fac = build_bezout_factors(&g, &FactorGains::new(rows(&[&[0.0]]), rows(&[&[0.0]]))).unwrap();
        let grid = freq_grid(0.1, 32);
        let one = Mat::identity(1, 1);
        assert!(max_grid_distance_to(&fac.m, &one, &grid).unwrap() < 1e-15);
        assert!(max_grid_distance_to(&fac.x, &one, &grid).unwrap() < 1e-15);
        assert!(max_grid_distance_to(&fac.y, &Mat::zeros(1, 1), &grid).unwrap() < 1e-15);
        assert!(max_grid_deviation(&fac.n, &g, &grid).unwrap() < 1e-15);
    }

    #[test]
    fn bezout_holds_and_detects_perturbation() {
        let g = demo_plant();
        let fac = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        assert!(verify_bezout(&fac, GRID_POINTS).unwrap() < 1e-8);
        let mut bad = fac.clone();
        let yc = bad.y.c() * (1.0 + 1e-3) + Mat::from_element(2, 3, 1e-3);
        bad.y = StateSpace::new(bad.y.a().clone(), bad.y.b().clone(), yc, bad.y.d().clone(), 0.1).unwrap();
        assert!(verify_bezout(&bad, GRID_POINTS).unwrap() >= 1e-4);
    }

    #[test]
    fn factorizations_reproduce_plant() {
        let g = demo_plant();
        let fac = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let grid = freq_grid(0.1, GRID_POINTS);
        let rcf = series_connect(&invert_io(&fac.m).unwrap(), &fac.n).unwrap();
        let lcf = series_connect(&fac.n_hat, &invert_io(&fac.m_hat).unwrap()).unwrap();
        assert!(max_grid_deviation(&rcf, &g, &grid).unwrap() < 1e-9);
        assert!(max_grid_deviation(&lcf, &g, &grid).unwrap() < 1e-9);
    }

    #[test]
    fn rejects_destabilizing_gains() {
        let g = demo_plant();
        let bad = FactorGains::new(Mat::zeros(2, 3), Mat::zeros(3, 2));
        assert!(matches!(build_bezout_factors(&g, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn youla_forms_agree_and_stabilize() {
        let g = demo_plant();
        let fac = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let grid = freq_grid(0.1, 128);
        let k0 = youla_controller(&fac, &YoulaParam::zero(2, 2, 0.1)).unwrap();
        let nominal = series_connect(&fac.y, &invert_io(&fac.x).unwrap()).unwrap().neg();
        assert!(max_grid_deviation(&k0, &nominal, &grid).unwrap() < 1e-9);
        let q = YoulaParam::new(
            StateSpace::new(rows(&[&[0.3]]), rows(&[&[1.0, -0.5]]), rows(&[&[0.2], &[0.7]]), rows(&[&[0.1, 0.0], &[0.0, -0.2]]), 0.1).unwrap(),
        )
        .unwrap();
        let kl = youla_controller(&fac, &q).unwrap();
        let kr = youla_controller_right(&fac, &q).unwrap();
        assert!(max_grid_deviation(&kl, &kr, &grid).unwrap() < 1e-8);
        assert!(sscore::is_schur(&closed_loop_a(&g, &kl).unwrap()));
    }

    fn noise_signal(len: usize, dim: usize, seed: u64) -> Signal {
        let mut rng = crate::stats::rng_stream(seed, 0);
        let s = (0..len).map(|_| crate::stats::standard_normal(&mut rng, dim)).collect();
        Signal::new(0.1, dim, s).unwrap()
    }

    #[test]
    fn residual_bijection_round_trip() {
        let g = demo_plant();
        let fac = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let q = YoulaParam::new(StateSpace::new(rows(&[&[0.5]]), rows(&[&[1.0, 1.0]]), rows(&[&[0.3], &[-0.1]]), Mat::zeros(2, 2), 0.1).unwrap()).unwrap();
        let ru = noise_signal(400, 2, 1);
        let ry = noise_signal(400, 2, 2);
        let (u, y) = io_from_residuals(&fac, &q, &ru, &ry).unwrap();
        let (ru2, ry2) = residuals_from_io(&fac, &q, &u, &y).unwrap();
        assert!(ru.max_abs_diff(&ru2).unwrap() < 1e-9);
        assert!(ry.max_abs_diff(&ry2).unwrap() < 1e-9);
    }

    #[test]
    fn image_signals_have_zero_output_residual() {
        let g = demo_plant();
        let fac = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let v = noise_signal(300, 2, 3);
        let u = v.filter(&fac.m).unwrap();
        let y = v.filter(&fac.n).unwrap();
        let (ru, ry) = residuals_from_io(&fac, &YoulaParam::zero(2, 2, 0.1), &u, &y).unwrap();
        assert!(ry.max_abs_from(0) < 1e-10);
        assert!(ru.max_abs_diff(&v).unwrap() < 1e-10);
    }

    #[test]
    fn mode_compensators_invert_and_match_closed_forms() {
        let g = demo_plant();
        let base = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let (f1, l1) = (&base.gains.f * 0.9, &base.gains.l * 0.9);
        let comp = reparameterize_mode(&base, &f1, &l1).unwrap();
        let grid = freq_grid(0.1, GRID_POINTS);
        let eye = Mat::identity(2, 2);
        assert!(max_grid_distance_to(&series_connect(&comp.v_0i, &comp.v_i0).unwrap(), &eye, &grid).unwrap() < 1e-8);
        assert!(max_grid_distance_to(&series_connect(&comp.r_0i, &comp.r_i0).unwrap(), &eye, &grid).unwrap() < 1e-8);
        // The r_{y,i} feedforward closes as Q_i = -V_0i V_bar_i0.
        let alt = series_connect(&comp.v_bar_i0, &comp.v_0i).unwrap().neg();
        assert!(max_grid_deviation(&alt, &comp.q_i, &grid).unwrap() < 1e-8);
        // Mode factors agree with V_i0 on the plant image.
        assert!(max_grid_deviation(&series_connect(&comp.v_i0, &base.m).unwrap(), &comp.factors.m, &grid).unwrap() < 1e-8);
    }

    #[test]
    fn identical_mode_is_identity_like() {
        let g = demo_plant();
        let base = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let comp = reparameterize_mode(&base, &base.gains.f.clone(), &base.gains.l.clone()).unwrap();
        let grid = freq_grid(0.1, 64);
        let eye = Mat::identity(2, 2);
        assert!(max_grid_distance_to(&comp.v_i0, &eye, &grid).unwrap() < 1e-14);
        assert!(max_grid_distance_to(&comp.r_0i, &eye, &grid).unwrap() < 1e-14);
        assert!(max_grid_distance_to(&comp.q_i, &Mat::zeros(2, 2), &grid).unwrap() < 1e-10);
    }

    #[test]
    fn mode_residuals_reconstruct_io() {
        let g = demo_plant();
        let base = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let comp = reparameterize_mode(&base, &(&base.gains.f * 0.8), &(&base.gains.l * 1.1)).unwrap();
        let rui = noise_signal(300, 2, 5);
        let ryi = noise_signal(300, 2, 6);
        let direct = io_generator(&comp.factors, &YoulaParam::zero(2, 2, 0.1)).unwrap();
        let expect = rui.stack(&ryi).unwrap().filter(&direct).unwrap();
        let (u, y) = io_from_mode_residuals(&base, &comp, &rui, &ryi).unwrap();
        assert!(expect.max_abs_diff(&u.stack(&y).unwrap()).unwrap() < 1e-9);
        // Same record through the base generator with weights Q_u and Q_e.
        let ry = ryi.filter(&comp.r_0i).unwrap();
        let ru_from_i = rui.filter(&comp.q_u).unwrap();
        let qe = YoulaParam::new(comp.q_e.clone()).unwrap();
        let weighted = io_generator(&base, &qe).unwrap();
        let (u2, y2) = {
            let out = ru_from_i.stack(&ry).unwrap().filter(&weighted).unwrap();
            (out.rows(0, 2), out.rows(2, 2))
        };
        assert!(u.max_abs_diff(&u2).unwrap() < 1e-9);
        assert!(y.max_abs_diff(&y2).unwrap() < 1e-9);
    }

    #[test]
    fn schedule_lookup() {
        let g = demo_plant();
        let gains = demo_gains(&g);
        let set = ModeSet::new(&g, vec![(gains.f.clone(), gains.l.clone()), (&gains.f * 0.9, &gains.l * 0.9)], vec![(10, 1), (20, 0)]).unwrap();
        assert_eq!((set.mode_at(0), set.mode_at(10), set.mode_at(19), set.mode_at(25)), (0, 1, 1, 0));
        assert!(ModeSet::new(&g, vec![(gains.f.clone(), gains.l.clone())], vec![(3, 1)]).is_err());
        assert!(ModeSet::new(&g, vec![(Mat::zeros(2, 3), gains.l.clone())], vec![]).is_err());
    }

    #[test]
    fn nominal_closed_loop_has_vanishing_output_residual() {
        let g = demo_plant();
        let fac = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
        let k = youla_controller(&fac, &YoulaParam::zero(2, 2, 0.1)).unwrap();
        // Loop u = K y + r with a known excitation r, noise free.
        let mut xp = Vector::from_vec(vec![1.0, -1.0, 0.5]);
        let mut xk = Vector::zeros(k.n());
        let dk_d = Mat::identity(2, 2) - k.d() * g.d();
        let e = linalg::inverse(&dk_d, "loop").unwrap();
        let mut us = Vec::new();
        let mut ys = Vec::new();
        for i in 0..300 {
            let r = Vector::from_vec(vec![(i as f64 * 0.1).sin(), 0.3]);
            let u = &e * (k.c() * &xk + k.d() * g.c() * &xp + &r);
            let y = g.c() * &xp + g.d() * &u;
            xk = k.a() * &xk + k.b() * &y;
            xp = g.a() * &xp + g.b() * &u;
            us.push(u);
            ys.push(y);
        }
        let u = Signal::new(0.1, 2, us).unwrap();
        let y = Signal::new(0.1, 2, ys).unwrap();
        let (_, ry) = residuals_from_io(&fac, &YoulaParam::zero(2, 2, 0.1), &u, &y).unwrap();
        assert!(ry.max_abs_from(5 * 3 * 10) < 1e-10);
    }

    fn random_plant() -> impl Strategy<Value = StateSpace> {
        (1usize..6, 1usize..3, 1usize..3).prop_flat_map(|(n, m, p)| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(-1.0f64..1.0, n * m),
                proptest::collection::vec(-1.0f64..1.0, p * n),
                proptest::collection::vec(-0.5f64..0.5, p * m),
                0.2f64..1.3,
            )
                .prop_map(move |(av, bv, cv, dv, rho)| {
                    let mut a = Mat::from_vec(n, n, av);
                    let r = linalg::spectral_radius(&a).unwrap();
                    if r > 0.0 {
                        a *= rho / r;
                    }
                    StateSpace::new(a, Mat::from_vec(n, m, bv), Mat::from_vec(p, n, cv), Mat::from_vec(p, m, dv), 0.1).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn bezout_identity_for_random_plants(g in random_plant()) {
            let (n, m, p) = (g.n(), g.m(), g.p());
            let lq = sscore::lq_gain(&g, &Mat::identity(n, n), &Mat::identity(m, m));
            let kf = sscore::kalman_gain(&g, &sscore::NoiseSpec::isotropic(n, p, 1.0, 1.0).unwrap());
            prop_assume!(lq.is_ok() && kf.is_ok());
            let fac = build_bezout_factors(&g, &FactorGains::new(lq.unwrap().gain, kf.unwrap().gain)).unwrap();
            prop_assert!(verify_bezout(&fac, GRID_POINTS).unwrap() < 1e-8);
            let rcf = series_connect(&invert_io(&fac.m).unwrap(), &fac.n).unwrap();
            prop_assert!(max_grid_deviation(&rcf, &g, &freq_grid(0.1, GRID_POINTS)).unwrap() < 1e-9);
        }

        #[test]
        fn youla_closed_loop_is_schur(qa in -0.95f64..0.95, qb in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let g = demo_plant();
            let fac = build_bezout_factors(&g, &demo_gains(&g)).unwrap();
            let q = StateSpace::new(rows(&[&[qa]]), rows(&[&[qb[0], qb[1]]]), rows(&[&[qb[2]], &[qb[3]]]), Mat::zeros(2, 2), 0.1).unwrap();
            let k = youla_controller(&fac, &YoulaParam::new(q).unwrap()).unwrap();
            prop_assert!(sscore::is_schur(&closed_loop_a(&g, &k).unwrap()));
        }
    }
}
