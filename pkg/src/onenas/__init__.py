"""Online neuroevolution of recurrent forecasters."""
