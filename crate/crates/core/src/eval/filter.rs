//! Binary median (majority) filtering of frame masks.

use crate::error::{Error, Result};

/// Majority vote over a centered window of odd `width`. Positions whose
/// window would overhang the sequence replicate the nearest fully-windowed
/// output value; when the mask is shorter than the window, every position
/// takes the global majority.
pub fn median_filter(mask: &[bool], width: usize) -> Result<Vec<bool>> {
    if width % 2 == 0 || width == 0 {
        return Err(Error::invalid(format!("median filter width must be odd, got {width}")));
    }
    if width == 1 || mask.is_empty() {
        return Ok(mask.to_vec());
    }
    let half = width / 2;
    let len = mask.len();
    if len < width {
        let trues = mask.iter().filter(|&&v| v).count();
        return Ok(vec![trues * 2 > len; len]);
    }
    let mut out = vec![false; len];
    for t in half..len - half {
        let trues = mask[t - half..=t + half].iter().filter(|&&v| v).count();
        out[t] = trues > half;
    }
    let first = out[half];
    let last = out[len - 1 - half];
    for slot in out.iter_mut().take(half) {
        *slot = first;
    }
    for slot in out.iter_mut().skip(len - half) {
        *slot = last;
    }
    Ok(out)
}
