"""Soft-photon asymptotics of a classical extended charge coupled to the Maxwell field.

Fields live on a spherical momentum-space grid; the charge follows the
smeared Lorentz force. The package reconstructs scattered radiation,
measures infrared and spatial tails and checks their conservation and the
soft-photon identity against closed forms.
"""

__version__ = "0.1.0"
