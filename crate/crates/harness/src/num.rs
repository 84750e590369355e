/// Formats `v` with 17 significant digits (enough to round-trip any `f64`),
/// trimming trailing zeros in the fixed-point form.
pub fn fmt17(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.16e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        sci
    }
}

#[cfg(test)]
mod tests {
    use super::fmt17;

    #[test]
    fn round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-9, 123456.789, 1e300, 5e-324, -0.0, 0.5, 100.0] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt17(0.5), "0.5");
        assert_eq!(fmt17(100.0), "100");
        assert_eq!(fmt17(0.1), "0.10000000000000001");
    }
}
