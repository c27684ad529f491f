//! Structural generators: array multiplier, ripple-carry adder, MAC.
//!
//! The multiplier works in sign-magnitude form behind two's-complement
//! ports: the weight passes through a conditional-negate stage into an
//! unsigned 8x8 AND array with half/full-adder column reduction, and the
//! raw product is conditionally negated back. The weight-side conversion
//! logic is static whenever the weight input is pinned, so switching
//! activity tracks the magnitude's one-bits: small |w| activates few
//! partial-product rows regardless of sign, and w = 0 activates none.
//!
//! The adder is a plain ripple-carry chain so its longest paths are easy
//! to audit: the carry leaves bit 0 through an AND2, ripples through an
//! AND2+OR2 pair per bit, and lands in the top sum XOR2.

use crate::error::{Error, Result};
use super::builder::NetlistBuilder;
use super::{from_signed, to_signed, NetId, Netlist};

pub const WEIGHT_BITS: usize = 8;
pub const ACT_BITS: usize = 8;
pub const PRODUCT_BITS: usize = 16;
pub const ADDER_SUM_BITS: usize = 22;

/// `out = s ? (~bits + 1) : bits`, ripple increment folded into the
/// complement. Bit 0 passes through unchanged (negation fixes the LSB).
fn conditional_negate(b: &mut NetlistBuilder, bits: &[NetId], s: NetId) -> Vec<NetId> {
    let mut out = Vec::with_capacity(bits.len());
    out.push(bits[0]);
    let inv0 = b.inv(bits[0]);
    let mut carry = b.and2(inv0, s);
    for k in 1..bits.len() {
        let x = b.xor2(bits[k], s);
        out.push(b.xor2(x, carry));
        if k + 1 < bits.len() {
            carry = b.and2(x, carry);
        }
    }
    out
}

/// Column reduction of an unsigned partial-product array. Columns beyond
/// `width - 1` do not exist, so carries out of the top column fold into
/// its mod-2 sum.
fn reduce_columns(b: &mut NetlistBuilder, mut cols: Vec<Vec<NetId>>) -> Vec<NetId> {
    let width = cols.len();
    let mut out = Vec::with_capacity(width);
    for k in 0..width {
        let last = k == width - 1;
        while cols[k].len() > 1 {
            if cols[k].len() >= 3 {
                let x = cols[k].remove(0);
                let y = cols[k].remove(0);
                let z = cols[k].remove(0);
                let t = b.xor2(x, y);
                let s = b.xor2(t, z);
                cols[k].push(s);
                if !last {
                    let c1 = b.and2(x, y);
                    let c2 = b.and2(t, z);
                    let c = b.or2(c1, c2);
                    cols[k + 1].push(c);
                }
            } else {
                let x = cols[k].remove(0);
                let y = cols[k].remove(0);
                let s = b.xor2(x, y);
                cols[k].push(s);
                if !last {
                    let c = b.and2(x, y);
                    cols[k + 1].push(c);
                }
            }
        }
        assert_eq!(cols[k].len(), 1, "column {k} must reduce to one bit");
        out.push(cols[k][0]);
    }
    out
}

/// Emits the multiplier gates for `w * a` (signed 8 x unsigned 8) and
/// returns the 16 product nets, LSB first.
fn build_multiplier_into(b: &mut NetlistBuilder, w: &[NetId], a: &[NetId]) -> Vec<NetId> {
    assert_eq!(w.len(), WEIGHT_BITS);
    assert_eq!(a.len(), ACT_BITS);

    let sign = w[WEIGHT_BITS - 1];
    let magnitude = conditional_negate(b, w, sign);

    let mut cols: Vec<Vec<NetId>> = vec![Vec::new(); PRODUCT_BITS];
    for (i, &mi) in magnitude.iter().enumerate() {
        for (j, &aj) in a.iter().enumerate() {
            cols[i + j].push(b.and2(mi, aj));
        }
    }
    let unsigned = reduce_columns(b, cols);
    conditional_negate(b, &unsigned, sign)
}

/// Emits the 22-bit ripple-carry adder `sum = sign_extend(p) + ps` and
/// returns the sum nets, LSB first. The carry out of bit 21 is dropped so
/// the result wraps modulo 2^22.
fn build_adder_into(b: &mut NetlistBuilder, p: &[NetId], ps: &[NetId]) -> Vec<NetId> {
    assert_eq!(p.len(), PRODUCT_BITS);
    assert_eq!(ps.len(), ADDER_SUM_BITS);
    let ext = |k: usize| p[k.min(PRODUCT_BITS - 1)];

    let mut sum = Vec::with_capacity(ADDER_SUM_BITS);
    let mut carry = {
        let s0 = b.xor2(ext(0), ps[0]);
        sum.push(s0);
        b.and2(ext(0), ps[0])
    };
    for k in 1..ADDER_SUM_BITS {
        let t = b.xor2(ext(k), ps[k]);
        let s = b.xor2(t, carry);
        sum.push(s);
        if k < ADDER_SUM_BITS - 1 {
            let g = b.and2(ext(k), ps[k]);
            let pr = b.and2(t, carry);
            carry = b.or2(g, pr);
        }
    }
    sum
}

/// Combinational two's-complement multiplier: 8-bit signed weight x 8-bit
/// unsigned activation -> 16-bit signed product.
pub fn gen_multiplier() -> Netlist {
    let mut b = NetlistBuilder::new();
    let w = b.add_input("weight", WEIGHT_BITS);
    let a = b.add_input("activation", ACT_BITS);
    let out = b.declare_output("product", PRODUCT_BITS);
    let p = build_multiplier_into(&mut b, &w, &a);
    for (k, &net) in p.iter().enumerate() {
        b.bind_output(out, k, net);
    }
    b.finish().expect("multiplier netlist is well formed")
}

/// Combinational 22-bit adder: sign-extended 16-bit product plus 22-bit
/// partial sum, wrapping on overflow.
pub fn gen_adder() -> Netlist {
    let mut b = NetlistBuilder::new();
    let p = b.add_input("product", PRODUCT_BITS);
    let ps = b.add_input("partial_sum", ADDER_SUM_BITS);
    let out = b.declare_output("sum", ADDER_SUM_BITS);
    let s = build_adder_into(&mut b, &p, &ps);
    for (k, &net) in s.iter().enumerate() {
        b.bind_output(out, k, net);
    }
    b.finish().expect("adder netlist is well formed")
}

/// The full MAC unit with the product nets exposed as a monitored port.
#[derive(Debug, Clone)]
pub struct MacNetlist {
    pub netlist: Netlist,
}

/// Composes [`gen_multiplier`] and [`gen_adder`]; the 16 product nets are
/// registered as monitored nets.
pub fn gen_mac() -> MacNetlist {
    let mut b = NetlistBuilder::new();
    let w = b.add_input("weight", WEIGHT_BITS);
    let a = b.add_input("activation", ACT_BITS);
    let ps = b.add_input("partial_sum", ADDER_SUM_BITS);
    let sum_out = b.declare_output("sum", ADDER_SUM_BITS);
    let prod_mon = b.declare_monitored("product", PRODUCT_BITS);
    let p = build_multiplier_into(&mut b, &w, &a);
    for (k, &net) in p.iter().enumerate() {
        b.bind_monitored(prod_mon, k, net);
    }
    let s = build_adder_into(&mut b, &p, &ps);
    for (k, &net) in s.iter().enumerate() {
        b.bind_output(sum_out, k, net);
    }
    MacNetlist { netlist: b.finish().expect("MAC netlist is well formed") }
}

impl MacNetlist {
    /// Builds the primary-input assignment for (weight, activation,
    /// partial sum). The partial sum is masked to 22 bits.
    pub fn assignment(&self, w: i8, a: u8, ps: u32) -> Vec<bool> {
        let mut bits = vec![false; self.netlist.n_input_bits()];
        self.fill_assignment(&mut bits, w, a, ps);
        bits
    }

    /// In-place variant of [`MacNetlist::assignment`] for hot loops.
    /// Relies on the canonical port layout: weight bits 0..8, activation
    /// bits 8..16, partial-sum bits 16..38.
    pub fn fill_assignment(&self, bits: &mut [bool], w: i8, a: u8, ps: u32) {
        let w = from_signed(w as i64, 8);
        for i in 0..WEIGHT_BITS {
            bits[i] = (w >> i) & 1 == 1;
        }
        for i in 0..ACT_BITS {
            bits[WEIGHT_BITS + i] = (a >> i) & 1 == 1;
        }
        for i in 0..ADDER_SUM_BITS {
            bits[WEIGHT_BITS + ACT_BITS + i] = (ps >> i) & 1 == 1;
        }
    }

    pub fn sum_port(&self) -> &super::Port {
        self.netlist.output_port("sum").expect("sum port")
    }

    pub fn product_port(&self) -> &super::Port {
        self.netlist.monitored_port("product").expect("product port")
    }

    /// Decodes the 22-bit sum (raw pattern) and 16-bit signed product from
    /// a settled value vector.
    pub fn decode(&self, values: &[bool]) -> MacOutputs {
        let sum_raw = Netlist::read_port(self.sum_port(), values) as u32;
        let product_raw = Netlist::read_port(self.product_port(), values) as u32;
        MacOutputs {
            sum_raw,
            sum: to_signed(sum_raw as u64, 22) as i32,
            product: to_signed(product_raw as u64, 16) as i32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacOutputs {
    pub sum_raw: u32,
    pub sum: i32,
    pub product: i32,
}

/// Assignment helper for the standalone multiplier netlist.
pub fn multiplier_assignment(n: &Netlist, w: i8, a: u8) -> Result<Vec<bool>> {
    n.input_assignment(&[
        ("weight", from_signed(w as i64, 8)),
        ("activation", a as u64),
    ])
}

/// Assignment helper for the standalone adder netlist.
pub fn adder_assignment(n: &Netlist, p: i32, ps: u32) -> Result<Vec<bool>> {
    if !(-(1 << 15)..1 << 15).contains(&p) {
        return Err(Error::Input(format!("product {p} does not fit 16 signed bits")));
    }
    n.input_assignment(&[
        ("product", from_signed(p as i64, 16)),
        ("partial_sum", (ps & ((1 << 22) - 1)) as u64),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::settle;
    use crate::netlist::validate;

    fn eval_multiplier(n: &Netlist, w: i8, a: u8) -> i32 {
        let values = settle(n, &multiplier_assignment(n, w, a).unwrap()).unwrap();
        let raw = Netlist::read_port(n.output_port("product").unwrap(), &values);
        to_signed(raw, 16) as i32
    }

    fn eval_adder(n: &Netlist, p: i32, ps: u32) -> u32 {
        let values = settle(n, &adder_assignment(n, p, ps).unwrap()).unwrap();
        Netlist::read_port(n.output_port("sum").unwrap(), &values) as u32
    }

    #[test]
    fn multiplier_small_cases() {
        let n = gen_multiplier();
        assert!(validate(&n).is_empty());
        assert_eq!(eval_multiplier(&n, 3, 5), 15);
        assert_eq!(eval_multiplier(&n, 0, 255), 0);
        assert_eq!(eval_multiplier(&n, -127, 255), -32385);
        assert_eq!(eval_multiplier(&n, -128, 255), -32640);
    }

    #[test]
    fn multiplier_exhaustive_all_weights() {
        // Oracle: native signed multiplication over the full input domain,
        // including -128 which the characterization flow never uses.
        let n = gen_multiplier();
        for w in i8::MIN..=i8::MAX {
            for a in 0..=255u8 {
                let expected = w as i32 * a as i32;
                assert_eq!(eval_multiplier(&n, w, a), expected, "w={w} a={a}");
            }
        }
    }

    #[test]
    fn pinned_weight_keeps_conversion_logic_static() {
        // With the weight fixed, activation transitions must not reach
        // the weight-side negation gates: only popcount(|w|) rows toggle.
        use crate::engine::Simulator;
        use crate::netlist::CellLibrary;
        let n = gen_multiplier();
        let lib = CellLibrary::default();
        let mut sim = Simulator::new(&n, &lib).unwrap();
        // Weight -2: magnitude 2 has one set bit; weight -105: four.
        let cheap = {
            let v1 = multiplier_assignment(&n, -2, 0).unwrap();
            let v2 = multiplier_assignment(&n, -2, 255).unwrap();
            sim.run(&v1, &v2).unwrap();
            sim.energy_fj()
        };
        let costly = {
            let v1 = multiplier_assignment(&n, -105, 0).unwrap();
            let v2 = multiplier_assignment(&n, -105, 255).unwrap();
            sim.run(&v1, &v2).unwrap();
            sim.energy_fj()
        };
        assert!(cheap < costly, "cheap {cheap} fJ vs costly {costly} fJ");
    }

    #[test]
    fn adder_small_cases() {
        let n = gen_adder();
        assert!(validate(&n).is_empty());
        assert_eq!(eval_adder(&n, 15, 10), 25);
        // Sign extension: -1 + 0 is the all-ones 22-bit pattern.
        assert_eq!(eval_adder(&n, -1, 0), (1 << 22) - 1);
        // Wrap-around at the top of the range.
        let expected = ((32385i64 + ((1 << 21) - 1)) as u64 & ((1 << 22) - 1)) as u32;
        assert_eq!(eval_adder(&n, 32385, (1 << 21) - 1), expected);
    }

    #[test]
    fn adder_random_and_corner_cases() {
        // Oracle: modular addition of the sign-extended product.
        use rand::{Rng, SeedableRng};
        let n = gen_adder();
        let check = |p: i32, ps: u32| {
            let expected = ((p as i64 + to_signed(ps as u64, 22)) as u64 & ((1 << 22) - 1)) as u32;
            assert_eq!(eval_adder(&n, p, ps), expected, "p={p} ps={ps:#x}");
        };
        let corners_p = [0i32, -1, 1, i16::MAX as i32, i16::MIN as i32, 0x5555, -0x5556];
        let corners_ps = [0u32, (1 << 22) - 1, 0x2AAAAA, 0x155555, 1 << 21];
        for &p in &corners_p {
            for &ps in &corners_ps {
                check(p, ps);
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            check(rng.random_range(i16::MIN as i32..=i16::MAX as i32), rng.random_range(0..1 << 22));
        }
    }

    #[test]
    fn mac_composition() {
        let mac = gen_mac();
        assert!(validate(&mac.netlist).is_empty());
        assert_eq!(mac.product_port().width(), 16);

        let eval = |w: i8, a: u8, ps: u32| {
            let values = settle(&mac.netlist, &mac.assignment(w, a, ps)).unwrap();
            mac.decode(&values)
        };
        let out = eval(3, 5, 10);
        assert_eq!(out.sum, 25);
        assert_eq!(out.product, 15);

        let out = eval(-2, 100, 1000);
        assert_eq!(out.sum, 800);
        assert_eq!(out.product, -200);

        // Oracle: plain integer arithmetic, wrapped to 22 bits.
        let out = eval(-105, 200, 0);
        assert_eq!(out.sum, -21000);
    }
}
