"""Caching layer for amplification sweeps and coarsest-grid factorizations."""
from cachetools import LRUCache
import hashlib
from typing import Any, Optional

from config import config


class ResultCache:
    """LRU cache keyed by the md5 digest of a canonical text description."""

    def __init__(self, maxsize: int = 1000):
        """
        Initialize the cache.

        Args:
            maxsize: Maximum number of cached items
        """
        self.cache = LRUCache(maxsize=maxsize)
        self.hits = 0
        self.misses = 0

    def _generate_key(self, description: str) -> str:
        """Generate a cache key from a canonical description."""
        return hashlib.md5(description.encode('utf-8')).hexdigest()

    def get(self, description: str) -> Optional[Any]:
        """
        Retrieve a cached result.

        Args:
            description: Canonical description of the computation

        Returns:
            The cached result, None otherwise
        """
        if not config.get('cache_enabled', True):
            return None
        value = self.cache.get(self._generate_key(description))
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def set(self, description: str, value: Any) -> None:
        """
        Store a result in the cache.

        Args:
            description: Canonical description of the computation
            value: The result
        """
        if not config.get('cache_enabled', True):
            return
        self.cache[self._generate_key(description)] = value

    def clear(self) -> None:
        """Clear all cached items."""
        self.cache.clear()
        self.hits = 0
        self.misses = 0

    def get_stats(self) -> dict:
        """Get cache statistics."""
        return {
            'size': len(self.cache),
            'maxsize': self.cache.maxsize,
            'hits': self.hits,
            'misses': self.misses
        }


# Global cache instances
amplification_cache = ResultCache(maxsize=config.get('cache_max_size', 1000))
factorization_cache = ResultCache(maxsize=64)
