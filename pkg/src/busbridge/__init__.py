"""Hardware-in-the-loop bus bridge: wire protocol, initiator client, responder emulator."""
from .protocol import (Ack, Command, FrameParser, Request, Response, ResponseStatus,
                       decode_response, encode_request, encode_response)
from .transport import LineModel, loopback_pair, modeled_transaction_time, open_channel
from .initiator import BusAccessResult, BusClient, BusStatus, InitiatorBridge, TimePolicy
from .responder import (BusMapping, DEFAULT_MEMORY_MAP, ResponderCore, build_responder,
                        serve_in_thread)

__version__ = "0.1.0"

__all__ = [
    "Ack", "Command", "FrameParser", "Request", "Response", "ResponseStatus",
    "decode_response", "encode_request", "encode_response",
    "LineModel", "loopback_pair", "modeled_transaction_time", "open_channel",
    "BusAccessResult", "BusClient", "BusStatus", "InitiatorBridge", "TimePolicy",
    "BusMapping", "DEFAULT_MEMORY_MAP", "ResponderCore", "build_responder", "serve_in_thread",
]
