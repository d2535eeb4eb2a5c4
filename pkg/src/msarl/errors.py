"""Exception taxonomy shared across the harness.

Grouped by subsystem; everything derives from MsarlError so callers (and the
CLI exit-code mapping) can catch one family at a time.
"""

from __future__ import annotations


class MsarlError(Exception):
    """Base class for all harness errors."""


# --- transcript grammar ---------------------------------------------------


class TranscriptError(MsarlError):
    """Malformed transcript text or an unserializable transcript value."""


class UnterminatedCodeBlock(TranscriptError):
    pass


class OrphanExecutionResult(TranscriptError):
    pass


class DanglingCodeRequest(TranscriptError):
    pass


class TrailingContentAfterFinal(TranscriptError):
    pass


class UnmarkedContent(TranscriptError):
    """Non-blank text before any segment marker."""


class InvalidTranscript(TranscriptError):
    """A Transcript value violates its structural invariants."""


class MalformedAnswerLiteral(MsarlError):
    """A final-answer literal that does not normalize to a number."""


# --- sandbox / execution --------------------------------------------------


class RunnerUnavailable(MsarlError):
    """The runner child process is missing or broke the wire protocol.

    Signals a deployment problem, never a misbehaving program.
    """


# --- rewards / credit -----------------------------------------------------


class GroupTooSmall(MsarlError):
    """Advantage estimation needs at least two rollouts."""


# --- agents / backends ----------------------------------------------------


class BackendFailure(MsarlError):
    """A backend could not produce an action or completion.

    May carry ``partial_trajectory`` when raised mid-episode.
    """

    def __init__(self, message: str, partial_trajectory=None):
        super().__init__(message)
        self.partial_trajectory = partial_trajectory


class PolicyUndefined(BackendFailure):
    """A scripted backend has no rule for the given context."""


class AuthError(BackendFailure):
    """Credential rejected by the remote endpoint; never retried."""


class TransientExhausted(BackendFailure):
    """Remote endpoint kept failing after all retries."""


class MalformedResponse(BackendFailure):
    """Remote endpoint replied with an unusable body."""


# --- tasks ----------------------------------------------------------------


class FileUnreadable(MsarlError):
    pass


class MalformedRecord(MsarlError):
    def __init__(self, line_number: int, message: str = ""):
        super().__init__(f"line {line_number}: {message}" if message else f"line {line_number}")
        self.line_number = line_number


class MissingAnswerMarker(MsarlError):
    pass


class SpecInvalid(MsarlError):
    pass


# --- trainer ----------------------------------------------------------------


class EmptyDataset(MsarlError):
    """No correct trajectories were available to imitate."""


# --- evaluation bands -------------------------------------------------------


class OutOfRange(MsarlError):
    pass


class MissingMode(MsarlError):
    def __init__(self, problem_id: str, mode: str):
        super().__init__(f"problem {problem_id!r} has no records for mode {mode!r}")
        self.problem_id = problem_id
        self.mode = mode


class MissingBandingAccuracy(MsarlError):
    def __init__(self, problem_id: str):
        super().__init__(f"problem {problem_id!r} has no banding accuracy")
        self.problem_id = problem_id


class JudgeUnparseable(MsarlError):
    """A remote judge reply did not start with VALID or INVALID."""


# --- persistence ------------------------------------------------------------


class UnknownRun(MsarlError):
    pass


class StoreUnwritable(MsarlError):
    pass


class CorruptRecord(MsarlError):
    def __init__(self, line_number: int, message: str = ""):
        super().__init__(f"line {line_number}: {message}" if message else f"line {line_number}")
        self.line_number = line_number
