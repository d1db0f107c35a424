use std::io::{BufRead, Write};

use super::{DynamicsError, Method, RefineTrace, Trajectory};
use crate::gates::GateTag;
use crate::scalar::Scalar;

const BASE_HEADER: &str = "tau,z,f,one_minus_f";
const REFINE_HEADER: &str = "tau,z,f,one_minus_f,z_aux,r,g";

/// Formats with 17 significant digits.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `tau,z,f,one_minus_f` (plus `z_aux,r,g` for refine).
pub fn write_trajectory_csv<S: Scalar, W: Write>(
    traj: &Trajectory<S>,
    mut w: W,
) -> std::io::Result<()> {
    match &traj.aux {
        None => writeln!(w, "{BASE_HEADER}")?,
        Some(_) => writeln!(w, "{REFINE_HEADER}")?,
    }
    for i in 0..traj.len() {
        let base = [traj.taus[i], traj.zs[i], traj.fs[i], traj.one_minus_fs[i]];
        let mut line: Vec<String> = base.iter().map(|v| fmt17(v.to_f64_lossy())).collect();
        if let Some(a) = &traj.aux {
            line.extend(
                [a.z_aux[i], a.r[i], a.g[i]]
                    .iter()
                    .map(|v| fmt17(v.to_f64_lossy())),
            );
        }
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads a trajectory CSV. The method is not stored in the file and is
/// supplied by the caller; refine files are tagged with the sigmoid base.
pub fn read_trajectory_csv<S: Scalar, R: BufRead>(
    r: R,
    method: Method,
    gate: GateTag,
) -> Result<Trajectory<S>, DynamicsError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(DynamicsError::Csv {
        line: 1,
        msg: "empty file".into(),
    })??;
    let refine = match header.trim() {
        BASE_HEADER => false,
        REFINE_HEADER => true,
        other => {
            return Err(DynamicsError::Csv {
                line: 1,
                msg: format!("unexpected header `{other}`"),
            })
        }
    };
    let gate = if refine && !gate.is_refine() {
        GateTag::REFINE
    } else {
        gate
    };
    let mut traj = Trajectory::empty(method, gate);
    if refine {
        traj.aux = Some(RefineTrace::default());
    } else {
        traj.aux = None;
    }
    let width = if refine { 7 } else { 4 };
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DynamicsError::Csv {
                line: lineno,
                msg: e.to_string(),
            })?;
        if vals.len() != width {
            return Err(DynamicsError::Csv {
                line: lineno,
                msg: format!("expected {width} fields, found {}", vals.len()),
            });
        }
        traj.taus.push(S::lit(vals[0]));
        traj.zs.push(S::lit(vals[1]));
        traj.fs.push(S::lit(vals[2]));
        traj.one_minus_fs.push(S::lit(vals[3]));
        if let Some(a) = traj.aux.as_mut() {
            a.z_aux.push(S::lit(vals[4]));
            a.r.push(S::lit(vals[5]));
            a.g.push(S::lit(vals[6]));
            // 1 - g from the stored complements, as in RefineGate::compose.
            let (q, r) = (vals[3], vals[5]);
            a.one_minus_g
                .push(S::lit(q * (2.0 * (1.0 - r) + q * (2.0 * r - 1.0))));
        }
    }
    Ok(traj)
}
