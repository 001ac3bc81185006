"""
Status codes for contract checks
A run passes only when every declared contract passes
"""
from typing import Iterable, Mapping, Tuple


class ContractStatus:
    """Outcome of one contract check or of a whole run"""

    PASSED = "PASSED"
    FAILED = "FAILED"
    ERROR = "ERROR"
    SKIPPED = "SKIPPED"


EXIT_CODES = {
    ContractStatus.PASSED: 0,
    ContractStatus.FAILED: 1,
    ContractStatus.ERROR: 2,
}


def determine_status(results: Iterable[Mapping]) -> Tuple[str, int]:
    """
    Determine the run status from individual contract results

    Args:
        results: dicts with a 'status' key holding a ContractStatus value

    Returns:
        (status, exit code); errors outrank failures, skipped checks are neutral
    """
    statuses = [r.get('status') for r in results]
    if ContractStatus.ERROR in statuses:
        status = ContractStatus.ERROR
    elif ContractStatus.FAILED in statuses:
        status = ContractStatus.FAILED
    else:
        status = ContractStatus.PASSED
    return status, EXIT_CODES[status]


def contract_result(name: str, ok: bool, detail: str) -> dict:
    """Result dict of one contract check"""
    return {'name': name, 'status': ContractStatus.PASSED if ok else ContractStatus.FAILED,
            'detail': detail}
