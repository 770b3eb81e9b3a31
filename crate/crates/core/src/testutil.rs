//! Shared fixtures for unit tests.

use crate::model::{Hazmat, ModeLabel, ShipmentRecord};

/// A valid record with bland defaults; tests overwrite the fields they care
/// about.
pub(crate) fn record(id: &str) -> ShipmentRecord {
    ShipmentRecord {
        id: id.to_string(),
        weight_lb: 10.0,
        value_usd: 100.0,
        sctg: "01".to_string(),
        sctg_group: "G1".to_string(),
        naics: "325".to_string(),
        orig_area: "A1".to_string(),
        dest_area: "A2".to_string(),
        gc_dist_mi: 100.0,
        routed_dist_mi: 120.0,
        hazmat: Hazmat::NotHaz,
        temp_controlled: false,
        export_flag: false,
        mode: ModeLabel::ForHireTruck,
    }
}
