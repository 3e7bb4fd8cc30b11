//! Double-double arithmetic: an unevaluated sum `hi + lo` of two f64 values
//! carrying about 106 significant bits. Just enough of it to evaluate the
//! loss for the finite-difference oracle.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

const LN_2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn hi(self) -> f64 {
        self.hi
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Exact product of two doubles.
    pub(crate) fn product(a: f64, b: f64) -> Dd {
        two_prod(a, b)
    }

    pub(crate) fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub(crate) fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd {
                hi: f64::INFINITY,
                lo: 0.0,
            };
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        // exp(x) = 2^k · (1 + expm1(r / 2^10))^(2^10), with |r| ≤ ln 2 / 2
        const SQUARINGS: i32 = 10;
        let k = (self.hi / LN_2.hi).round();
        let r = (self - LN_2 * k).scale_pow2(-SQUARINGS);
        let mut sum = r;
        let mut term = r;
        for n in 2..30 {
            term = term * r / n as f64;
            sum += term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)² − 1 = 2s + s², staying in expm1 form to keep precision
        for _ in 0..SQUARINGS {
            sum = sum * 2.0 + sum * sum;
        }
        (sum + Dd::ONE).scale_pow2(k as i32)
    }

    /// One Newton step from the f64 logarithm doubles its precision.
    pub(crate) fn ln(self) -> Dd {
        let y = Dd::from(self.hi.ln());
        y + self * (-y).exp() - Dd::ONE
    }

    pub(crate) fn tanh(self) -> Dd {
        let t = (self.abs() * -2.0).exp();
        let v = (Dd::ONE - t) / (Dd::ONE + t);
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Dd {
        Dd { hi, lo: 0.0 }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let s = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(s.hi, s.lo + t.lo)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + -o
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        quick_two_sum(p.hi, p.lo + self.lo * b)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * q1;
        let q2 = r.hi / o.hi;
        let r = r - o * q2;
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + Dd::from(q3)
    }
}

impl Div<f64> for Dd {
    type Output = Dd;
    fn div(self, b: f64) -> Dd {
        self / Dd::from(b)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, o: Dd) {
        *self = *self + o;
    }
}

impl SubAssign for Dd {
    fn sub_assign(&mut self, o: Dd) {
        *self = *self - o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        (a - b).abs().to_f64() <= tol
    }

    #[test]
    fn arithmetic_keeps_the_low_word() {
        let tiny = Dd::from(1.0) + Dd::from(1e-20);
        assert_eq!((tiny - Dd::ONE).to_f64(), 1e-20);
        let third = Dd::ONE / Dd::from(3.0);
        assert!(close(third * 3.0, Dd::ONE, 1e-31));
        let p = Dd::product(1.0 + 2f64.powi(-30), 1.0 - 2f64.powi(-30));
        assert_eq!(p.hi, 1.0);
        assert_eq!(p.lo, -2f64.powi(-60));
    }

    #[test]
    fn exp_matches_known_constant() {
        // e to 32 digits, split into doubles
        let e = Dd {
            hi: std::f64::consts::E,
            lo: 1.445_646_891_729_250_2e-16,
        };
        assert!(close(Dd::ONE.exp(), e, 1e-30));
        assert_eq!(Dd::ZERO.exp(), Dd::ONE);
    }

    #[test]
    fn exp_ln_tanh_identities() {
        for x in [-3.7, -0.7, -1e-3, 0.01, 0.3, 1.3, 2.5, 9.0] {
            let t = Dd::from(x) + Dd::from(x * 1e-17);
            assert!(close(t.exp() * (-t).exp(), Dd::ONE, 1e-30), "{x}");
            assert!(close(t.exp().ln(), t, 1e-30), "{x}");
            let (ep, em) = (t.exp(), (-t).exp());
            assert!(close(t.tanh(), (ep - em) / (ep + em), 1e-30), "{x}");
            assert!((t.tanh().to_f64() - x.tanh()).abs() < 1e-15);
        }
    }
}
