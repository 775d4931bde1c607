"""End-to-end encrypted store-and-forward messaging with a dedicated secure device.

All encryption and decryption happens in the device process ("the glasses");
the relay server and anything phone-side only ever see armored ciphertext.
"""

__version__ = "0.1.0"
