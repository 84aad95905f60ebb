"""latentpaint: semantic photo editing through a layered generator's latent space.

Pipeline: invert a photo to a latent code, edit the code with class-level
draw/erase/restyle operations, then render through an image-specific adapted
generator so unedited regions stay faithful to the photo.
"""

__version__ = "0.1.0"
