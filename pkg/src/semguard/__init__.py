"""Mahalanobis-distance screening of backdoor-poisoned samples for a
semantic-communication autoencoder trained on MNIST."""

__version__ = "0.1.0"
