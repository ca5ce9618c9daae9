//! Plain CSV helpers. Floats are written with 9 significant digits.

/// Formats like C's `%.9g`.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        // the rounded value may have gained a digit (9.99999999995 -> 10.0000000)
        trim_zeros(s)
    } else {
        let s = format!("{v:.8e}");
        let (mantissa, exponent) = s.split_once('e').expect("scientific format");
        format!("{}e{}", trim_zeros(mantissa.to_string()), exponent)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
