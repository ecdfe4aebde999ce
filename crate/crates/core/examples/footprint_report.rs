//! Energy, carbon and cost for the bundled GPU runs, plus a custom site.

use gemforge::footprint::{carbon_kg, energy_kwh, CarbonParams, FootprintConfig, GpuRun, SiteParams};

fn main() {
    let cfg = FootprintConfig::published();
    let report = cfg.report().unwrap();
    println!("{}", report.to_text());

    let run = GpuRun::new("my-finetune", "L40S", 4, 12.0, 0.3);
    let site = SiteParams { pue: 1.1, utilization: 0.8 };
    let kwh = energy_kwh(&run, &site).unwrap();
    let grid = CarbonParams::custom(0.12).unwrap();
    println!("{}: {kwh:.2} kWh, {:.2} kg CO2e", run.label, carbon_kg(kwh, &grid));
}
