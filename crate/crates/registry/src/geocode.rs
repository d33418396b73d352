//! Address geocoding behind a trait, with a fixture-backed stub.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use celltrace_core::GeoCoordinate;

pub trait Geocoder: Send + Sync {
    fn geocode(&self, address: &str) -> Option<GeoCoordinate>;
}

/// Looks addresses up in a fixed table. Addresses of the form
/// `geo:<lat>,<lon>` resolve to that coordinate directly.
#[derive(Debug, Clone, Default)]
pub struct FixtureGeocoder {
    table: BTreeMap<String, GeoCoordinate>,
}

fn normalize(address: &str) -> String {
    address.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl FixtureGeocoder {
    pub fn new(entries: impl IntoIterator<Item = (String, GeoCoordinate)>) -> Self {
        FixtureGeocoder {
            table: entries.into_iter().map(|(a, c)| (normalize(&a), c)).collect(),
        }
    }

    /// Reads a JSON object mapping address to `{"lat": .., "lon": ..}`.
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let table: BTreeMap<String, GeoCoordinate> =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(FixtureGeocoder::new(table))
    }
}

impl Geocoder for FixtureGeocoder {
    fn geocode(&self, address: &str) -> Option<GeoCoordinate> {
        if let Some(rest) = address.trim().strip_prefix("geo:") {
            let (lat, lon) = rest.split_once(',')?;
            return GeoCoordinate::new(lat.trim().parse().ok()?, lon.trim().parse().ok()?).ok();
        }
        self.table.get(&normalize(address)).copied()
    }
}
