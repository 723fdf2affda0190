"""Text-guided image inpainting GAN with separated mask convolution and dual affine decoding."""
