"""Supply rates, SOS storage certificates, the SDP engine and SDPA I/O."""

from .certificate import (CertificateCheck, DissipationTrace, NoCertificate, StorageCertificate,
                          SupplyRate, check_certificate, dissipation_residual, supply_rate,
                          synthesize_certificate)
from .sdp import SdpOptions, SdpProblem, SdpResult, SdpTooLarge, solve_sdp
from .sdpa import parse_sdpa, read_sdpa, sdpa_string, write_sdpa
from .sos import SosIdentity, SosProblem, compile_sos

__all__ = [
    "CertificateCheck", "DissipationTrace", "NoCertificate", "StorageCertificate", "SupplyRate",
    "check_certificate", "dissipation_residual", "supply_rate", "synthesize_certificate",
    "SdpOptions", "SdpProblem", "SdpResult", "SdpTooLarge", "solve_sdp",
    "parse_sdpa", "read_sdpa", "sdpa_string", "write_sdpa",
    "SosIdentity", "SosProblem", "compile_sos",
]
