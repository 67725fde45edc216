//! Fixed numeric formatting and the trajectory CSV.

use std::f64::consts::TAU;
use std::fmt::Write;

use diralg_core::Trajectory;

/// C-style `%.17g`.
pub fn g17(v: f64) -> String {
    const P: i32 = 17;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= P {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Header and rows: `t`, state, rates (`d_` prefix), monitors, then wrapped angles.
pub fn trajectory_csv(traj: &Trajectory, angles: &[usize]) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend(traj.labels.iter().cloned());
    header.extend(traj.labels.iter().map(|l| format!("d_{l}")));
    header.extend(traj.monitor_names.iter().cloned());
    header.extend(angles.iter().map(|&i| format!("{}_wrapped", traj.labels[i])));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..traj.len() {
        let mut row: Vec<String> = vec![g17(traj.t[i])];
        row.extend(traj.states[i].iter().map(|&v| g17(v)));
        row.extend(traj.rates[i].iter().map(|&v| g17(v)));
        row.extend(traj.monitors.iter().map(|m| g17(m[i])));
        row.extend(angles.iter().map(|&a| g17(traj.states[i][a].rem_euclid(TAU))));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}
