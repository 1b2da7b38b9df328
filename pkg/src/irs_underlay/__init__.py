"""Energy-efficient IRS-aided SWIPT spectrum-underlay design."""
