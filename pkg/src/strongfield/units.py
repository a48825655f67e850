"""Physical constants and unit conversions (Hartree atomic units internally)."""

import math

HARTREE_TO_EV = 27.2114
BOHR_PER_NM = 1.0 / 0.052917721067
SPEED_OF_LIGHT_AU = 137.035999084
FS_PER_AU = 0.02418884326586
# atomic unit of intensity: I [W/cm^2] = INTENSITY_AU * E0^2 [a.u.]
INTENSITY_AU_WCM2 = 3.509e16


def angular_frequency_au(wavelength_nm: float) -> float:
    """Laser angular frequency in a.u. for a vacuum wavelength in nm."""
    return 2.0 * math.pi * SPEED_OF_LIGHT_AU / (wavelength_nm * BOHR_PER_NM)


def peak_field_au(intensity_wcm2: float) -> float:
    """Peak electric field E0 in a.u. for a cycle-averaged intensity in W/cm^2."""
    return math.sqrt(intensity_wcm2 / INTENSITY_AU_WCM2)
