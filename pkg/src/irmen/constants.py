"""Physical constants (SI) and the default device parameter set."""

import math

MU0 = 4e-7 * math.pi  # T*m/A
KB = 1.380649e-23  # J/K
GAMMA = 1.760859e11  # rad/(s*T), electron, magnitude
C_LIGHT = 299_792_458.0  # m/s

# Table-level device defaults
K_ANIS = 4.5e4  # J/m^3
MS = 1.7e6  # A/m
ALPHA = 0.01
C_ME = 1e-15  # F
ALPHA_ME = 10.0 / C_LIGHT  # s/m
ETA = 0.8
LAMBDA_NM = 6.0
RHO = 10e-3 * 1e-2  # 10 mOhm*cm in Ohm*m
R_IR = 20e3  # Ohm
V_D = 0.1  # V
V_SUPPLY = 0.5  # V, synapse supply is +/- this
V_THRESHOLD = 0.2  # V
OTA_MAX_CURRENT = 1e-6  # A
# Per-OTA static power, W. Calibrated: default network at 40 nm -> 100 pJ/image.
OTA_STATIC_POWER = 1.904256e-06

POWERED_WINDOW = 130e-12  # s
STAGE_DELAY = 1.5e-9  # s

# charge-based CeNN reference figures used in comparison reports
BASELINE_ENERGY = 12e-9  # J per image
BASELINE_DELAY = 240.5e-9  # s per image

NM = 1e-9
NM3 = 1e-27
