//! Per-site model parameters derived from a dataset.

use serde::{Deserialize, Serialize};

use mssp_core::microgrid::{BatteryParams, SiteConfig, Tariff};

use crate::ingest::SiteDataset;

/// Prices and penalty shared by every site; the subscribed power is
/// derived from each site's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffTemplate {
    pub prices: [f64; 24],
    pub penalty: f64,
}

impl Default for TariffTemplate {
    fn default() -> Self {
        let t = Tariff::two_level(0.0);
        TariffTemplate {
            prices: t.prices,
            penalty: t.penalty,
        }
    }
}

/// Subscribed power: the largest netload of the whole series minus what the
/// battery can discharge in one step, floored at zero.
pub fn subscribed_power(max_netload: f64, battery: &BatteryParams, dt: f64) -> f64 {
    (max_netload - battery.max_discharge.abs() * dt).max(0.0)
}

pub fn derive_site_config(
    dataset: &SiteDataset,
    battery: &BatteryParams,
    tariff: &TariffTemplate,
) -> SiteConfig {
    let max = dataset.netload.max_value().unwrap_or(0.0);
    let mut site = SiteConfig::new(*battery, Tariff::two_level(0.0));
    site.tariff = Tariff {
        prices: tariff.prices,
        penalty: tariff.penalty,
        subscribed: subscribed_power(max, battery, site.dt),
    };
    site
}

#[cfg(test)]
mod tests {
    use super::*;
    use mssp_core::microgrid::NetloadSeries;

    fn battery(power: f64) -> BatteryParams {
        BatteryParams {
            capacity: 100.0,
            max_charge: power,
            max_discharge: -power,
            eff_charge: 0.95,
            eff_discharge: 0.95,
            initial_soc: 0.0,
        }
    }

    #[test]
    fn subscribed_power_from_peak() {
        let series = NetloadSeries::hourly(0, vec![10.0, 100.0, -5.0, 40.0]).unwrap();
        let ds = SiteDataset::new("a", series, 0.6);
        let site = derive_site_config(&ds, &battery(30.0), &TariffTemplate::default());
        assert_eq!(site.tariff.subscribed, 70.0);
        assert_eq!(site.tariff.price_at(14), 0.102);
        assert_eq!(site.tariff.price_at(8), 0.153);
        assert_eq!(site.tariff.penalty, 14.31);
    }

    #[test]
    fn subscribed_power_is_not_negative() {
        assert_eq!(subscribed_power(10.0, &battery(30.0), 1.0), 0.0);
    }
}
