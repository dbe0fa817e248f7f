//! Truncated Taylor ("jet") arithmetic.
//!
//! The Helffer-Sjostrand route needs derivatives of the smooth switch
//! function up to order M+1 at arbitrary points. The switch is built from
//! `exp(-1/((t-a)(b-t)))`, whose symbolic derivatives are unwieldy; instead
//! every evaluation is carried through jet arithmetic, which propagates
//! Taylor coefficients exactly (to machine precision) through +, *, /, exp.

/// Taylor coefficients `[f, f', f''/2!, ...]` of a function at a point.
#[derive(Clone, Debug)]
pub struct Jet(pub Vec<f64>);

impl Jet {
    pub fn constant(c: f64, order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        v[0] = c;
        Jet(v)
    }

    /// The identity function `t` expanded at `t0`.
    pub fn variable(t0: f64, order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        v[0] = t0;
        if order >= 1 {
            v[1] = 1.0;
        }
        Jet(v)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet(self.0.iter().map(|a| a * s).collect())
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let n = self.0.len();
        let mut c = vec![0.0; n];
        for k in 0..n {
            for i in 0..=k {
                c[k] += self.0[i] * o.0[k - i];
            }
        }
        Jet(c)
    }

    /// Reciprocal 1/self; requires a nonzero constant term.
    pub fn recip(&self) -> Jet {
        let n = self.0.len();
        let mut c = vec![0.0; n];
        c[0] = 1.0 / self.0[0];
        for k in 1..n {
            let mut s = 0.0;
            for i in 1..=k {
                s += self.0[i] * c[k - i];
            }
            c[k] = -s / self.0[0];
        }
        Jet(c)
    }

    pub fn exp(&self) -> Jet {
        let n = self.0.len();
        let mut e = vec![0.0; n];
        e[0] = self.0[0].exp();
        for k in 1..n {
            // e' = a' e  =>  k e_k = sum_{i=1..k} i a_i e_{k-i}
            let mut s = 0.0;
            for i in 1..=k {
                s += (i as f64) * self.0[i] * e[k - i];
            }
            e[k] = s / k as f64;
        }
        Jet(e)
    }

    /// Derivatives `[f, f', f'', ...]` (Taylor coefficients times factorials).
    pub fn derivatives(&self) -> Vec<f64> {
        let mut fact = 1.0;
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                c * fact
            })
            .collect()
    }
}
