"""
Mock generator service for external-proposer tests and manual experiments.

POST /generate with {prompt, max_tokens, temperature, top_k, top_p} answers
{"text": ...} from a scripted list of responses. The first `fail_first`
requests get HTTP 503.

Run as a script:
    python -m src.tests.mock_generator --port 8765 --responses responses.jsonl
"""

import argparse
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import List, Optional

logger = logging.getLogger(__name__)


class MockGenerator:

    def __init__(self, responses: List[str], fail_first: int = 0, host: str = "127.0.0.1", port: int = 0):
        self.responses = list(responses)
        self.fail_first = fail_first
        self.requests: List[dict] = []
        self._lock = threading.Lock()
        self._served = 0
        self.server = ThreadingHTTPServer((host, port), self._handler())
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/generate"

    def _next(self, body: dict):
        with self._lock:
            self.requests.append(body)
            if len(self.requests) <= self.fail_first:
                return None
            text = self.responses[self._served % len(self.responses)]
            self._served += 1
            return text

    def _handler(self):
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self.send_error(400, "body is not JSON")
                    return
                text = mock._next(body)
                if text is None:
                    self.send_error(503, "scripted failure")
                    return
                payload = json.dumps({"text": text}).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, fmt, *args):
                logger.debug("mock generator: " + fmt, *args)

        return Handler

    def start(self) -> "MockGenerator":
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def main():
    parser = argparse.ArgumentParser(description="Scripted generator service")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--responses", required=True, help="JSON lines with a 'text' field")
    parser.add_argument("--fail-first", type=int, default=0)
    args = parser.parse_args()
    with open(args.responses, encoding="utf-8") as f:
        responses = [json.loads(line)["text"] for line in f if line.strip()]
    mock = MockGenerator(responses, args.fail_first, port=args.port)
    print(f"✓ mock generator listening on {mock.url} with {len(responses)} responses")
    try:
        mock.server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        mock.server.server_close()


if __name__ == "__main__":
    main()
