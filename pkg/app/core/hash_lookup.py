"""Consultation de condensats (VirusTotal) derrière une interface commune."""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol
import hashlib
import logging
import re

import httpx
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.config import settings
from app.exceptions import HashLookupError

logger = logging.getLogger(__name__)

LOOKUP_PREFIX = "vt-lookup "
HEX_DIGEST = re.compile(r"^(?:[0-9a-fA-F]{32}|[0-9a-fA-F]{40}|[0-9a-fA-F]{64})$")


@dataclass(frozen=True)
class HashVerdict:
    digest: str
    malicious: Optional[bool]
    source: str

    @property
    def verdict(self) -> str:
        if self.malicious is None:
            return "unknown"
        return "malicious" if self.malicious else "clean"


class HashLookupClient(Protocol):
    def lookup(self, digest: str) -> HashVerdict:
        ...


def is_lookup_command(command: str) -> bool:
    return command.startswith(LOOKUP_PREFIX)


def lookup_target(command: str) -> str:
    return command[len(LOOKUP_PREFIX):].strip()


def resolve_digest(target: str) -> str:
    """Condensat hexadécimal tel quel, sinon SHA-256 du fichier désigné."""
    if HEX_DIGEST.match(target):
        return target.lower()
    path = Path(target)
    if not path.is_file():
        raise HashLookupError(f"Fichier à soumettre introuvable : {target}")
    return hashlib.sha256(path.read_bytes()).hexdigest()


class DryRunHashClient:
    """Client sans réseau : verdict toujours inconnu."""

    def lookup(self, digest: str) -> HashVerdict:
        return HashVerdict(digest=digest, malicious=None, source="dry-run")


class VirusTotalClient:
    def __init__(
        self,
        api_key: Optional[str] = None,
        base_url: Optional[str] = None,
        timeout: Optional[float] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        """
        Client de l'API VirusTotal v3.

        Args:
            api_key: Clé API (défaut : VT_API_KEY)
            base_url: URL de base (défaut : VT_BASE_URL)
            timeout: Timeout en secondes
            transport: Transport httpx (injecté par les tests)
        """
        self.api_key = api_key if api_key is not None else settings.VT_API_KEY
        if not self.api_key:
            raise HashLookupError("VT_API_KEY n'est pas définie")
        self.client = httpx.Client(
            base_url=base_url or settings.VT_BASE_URL,
            headers={"x-apikey": self.api_key},
            timeout=timeout or settings.VT_TIMEOUT,
            transport=transport,
        )

    @retry(
        retry=retry_if_exception_type(httpx.TransportError),
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=1, min=1, max=10),
        reraise=True,
    )
    def _get(self, digest: str) -> httpx.Response:
        return self.client.get(f"/files/{digest}")

    def lookup(self, digest: str) -> HashVerdict:
        try:
            response = self._get(digest)
        except httpx.TransportError as e:
            logger.error(f"VirusTotal injoignable : {str(e)}")
            raise HashLookupError(f"VirusTotal injoignable : {e}") from e

        if response.status_code == 404:
            return HashVerdict(digest=digest, malicious=None, source="virustotal")
        if response.status_code != 200:
            logger.error(f"Réponse VirusTotal {response.status_code} pour {digest}")
            raise HashLookupError(f"VirusTotal a répondu {response.status_code}")

        stats = response.json().get("data", {}).get("attributes", {}).get("last_analysis_stats", {})
        malicious = int(stats.get("malicious", 0)) > 0
        logger.info(f"{digest} : {'malveillant' if malicious else 'sain'} selon VirusTotal")
        return HashVerdict(digest=digest, malicious=malicious, source="virustotal")

    def close(self) -> None:
        self.client.close()
