from src.verify.verifier import VerificationReport, verify

__all__ = ["VerificationReport", "verify"]
