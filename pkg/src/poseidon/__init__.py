"""Form submissions carried by e-mail: XML payloads in attachments, validated,
deduplicated (newest wins), journaled and exported as CSV."""

__version__ = "0.1.0"
