
import asyncio
import gzip
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional
from urllib.parse import urlparse

import aiohttp

from ..errors import ConfigError, TruncationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FetchSource:
    url: str
    filename: Optional[str] = None
    expected_bytes: Optional[int] = None
    decompress: bool = True

    @classmethod
    def from_config(cls, entry) -> "FetchSource":
        if isinstance(entry, str):
            return cls(url=entry)
        if isinstance(entry, Mapping) and "url" in entry:
            return cls(url=entry["url"], filename=entry.get("filename"),
                       expected_bytes=entry.get("expected_bytes"),
                       decompress=bool(entry.get("decompress", True)))
        raise ConfigError(f"Invalid fetch entry: {entry!r}")

    def target_name(self) -> str:
        name = self.filename or Path(urlparse(self.url).path).name
        if not name:
            raise ConfigError(f"Cannot derive a file name from {self.url}")
        if self.decompress and name.endswith(".gz"):
            name = name[:-3]
        return name


class DatasetFetcher:
    """Downloads dataset files over HTTP(S) into a data directory."""

    def __init__(self, data_dir, timeout_seconds: int = 120, max_parallel: int = 4):
        self.data_dir = Path(data_dir)
        self.timeout = aiohttp.ClientTimeout(total=timeout_seconds)
        self.semaphore = asyncio.Semaphore(max_parallel)

    async def _download(self, session: aiohttp.ClientSession, source: FetchSource) -> Optional[Path]:
        target = self.data_dir / source.target_name()
        if target.is_file() and (source.expected_bytes is None or target.stat().st_size == source.expected_bytes):
            logger.info(f"{target} already present, skipping download")
            return target

        async with self.semaphore:
            try:
                async with session.get(source.url) as resp:
                    if resp.status != 200:
                        text = await resp.text()
                        logger.error(f"Download failed {resp.status} for {source.url}: {text[:200]}")
                        return None
                    payload = await resp.read()
            except Exception as e:
                logger.error(f"Request failed for {source.url}: {e}")
                return None

        try:
            if source.decompress and source.url.endswith(".gz"):
                payload = gzip.decompress(payload)
            if source.expected_bytes is not None and len(payload) != source.expected_bytes:
                raise TruncationError(source.url, source.expected_bytes, len(payload))
        except (OSError, EOFError, TruncationError) as e:
            logger.error(f"Rejected download {source.url}: {e}")
            return None
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(payload)
        logger.info(f"Fetched {source.url} -> {target} ({len(payload)} bytes)")
        return target

    async def fetch_all(self, sources: List[FetchSource]) -> List[Optional[Path]]:
        async with aiohttp.ClientSession(timeout=self.timeout) as session:
            return await asyncio.gather(*(self._download(session, s) for s in sources))
