use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Display window in Hounsfield units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub center: f64,
    pub width: f64,
}

impl WindowParams {
    /// Soft-tissue window, used when an image carries no window tags.
    pub const SOFT_TISSUE: WindowParams = WindowParams {
        center: 40.0,
        width: 400.0,
    };
    pub const LUNG: WindowParams = WindowParams {
        center: -600.0,
        width: 1500.0,
    };
}

/// Maps a stored pixel value to `[0, 1]`: rescale to HU, then clamp-linear
/// through the window. Values at or below `c − w/2` give 0, at or above
/// `c + w/2` give 1.
pub fn window_to_unit(raw: f64, slope: f64, intercept: f64, center: f64, width: f64) -> Result<f64> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::InvalidArgument(format!("window width must be positive, got {width}")));
    }
    let hu = slope * raw + intercept;
    let lo = center - width / 2.0;
    Ok(((hu - lo) / width).clamp(0.0, 1.0))
}
