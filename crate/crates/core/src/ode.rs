//! Fixed-step integration helpers shared by strips and flows.

/// Uniform grid `t0 + k·h`, `k = 0..=steps`, covering `[t0, t0 + length]`.
///
/// The step is the largest `h ≤ dt` that divides `length` into whole steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub h: f64,
    pub steps: usize,
}

impl Grid {
    pub fn new(t0: f64, length: f64, dt: f64) -> Grid {
        let ratio = length / dt;
        let rounded = ratio.round();
        let steps = if (rounded - ratio).abs() <= 1e-9 * ratio.max(1.0) {
            rounded
        } else {
            ratio.ceil()
        }
        .max(1.0) as usize;
        Grid {
            t0,
            h: length / steps as f64,
            steps,
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn end(&self) -> f64 {
        self.at(self.steps)
    }
}

/// One classical Runge–Kutta step of `y' = f(t, y)`.
pub fn rk4_step<E>(
    t: f64,
    y: &[f64],
    h: f64,
    mut f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
) -> Result<Vec<f64>, E> {
    let mut out = vec![0.0; y.len()];
    Rk4::new(y.len()).step(t, y, h, &mut out, |t, y, k| {
        k.copy_from_slice(&f(t, y)?);
        Ok(())
    })?;
    Ok(out)
}

/// Reusable stage buffers for repeated RK4 steps; `f` writes `y'` into its
/// third argument.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Rk4 {
        Rk4 {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
        }
    }

    pub fn step<E>(
        &mut self,
        t: f64,
        y: &[f64],
        h: f64,
        out: &mut [f64],
        mut f: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<(), E> {
        f(t, y, &mut self.k[0])?;
        self.step_after_first(t, y, h, out, f)
    }

    /// Buffer for the first stage `f(t, y)` when the caller already has it.
    pub fn first_stage(&mut self) -> &mut [f64] {
        &mut self.k[0]
    }

    /// As [`Rk4::step`], with [`Rk4::first_stage`] already filled in.
    pub fn step_after_first<E>(
        &mut self,
        t: f64,
        y: &[f64],
        h: f64,
        out: &mut [f64],
        mut f: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<(), E> {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let axpy = |tmp: &mut [f64], a: f64, k: &[f64]| {
            for ((o, yi), ki) in tmp.iter_mut().zip(y).zip(k) {
                *o = yi + a * ki;
            }
        };
        axpy(tmp, 0.5 * h, k1);
        f(t + 0.5 * h, tmp, k2)?;
        axpy(tmp, 0.5 * h, k2);
        f(t + 0.5 * h, tmp, k3)?;
        axpy(tmp, h, k3);
        f(t + h, tmp, k4)?;
        for i in 0..y.len() {
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}
